#include "feinn/vtkout.hpp"

#include <cstdio>
#include <fstream>

namespace feinn {

namespace {

void print_number(std::ofstream& f, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  f << buf;
}

}  // namespace

void write_vtk(const Mesh& mesh, const std::string& path,
               const std::map<std::string, VecX>& cell_data,
               const std::map<std::string, MatX>& cell_vectors) {
  std::ofstream f(path);
  require(f.good(), "write_vtk: cannot open " + path);
  f << "# vtk DataFile Version 3.0\nmesh\nASCII\n";
  f << "DATASET " << (mesh.surface ? "POLYDATA" : "UNSTRUCTURED_GRID") << "\n";
  f << "POINTS " << mesh.num_vertices() << " double\n";
  for (const auto& v : mesh.vertices) {
    print_number(f, v.x());
    f << " ";
    print_number(f, v.y());
    f << " ";
    print_number(f, v.z());
    f << "\n";
  }
  if (mesh.surface) {
    f << "POLYGONS " << mesh.num_cells() << " " << mesh.num_cells() * 5 << "\n";
    for (const auto& c : mesh.cells) f << "4 " << c[0] << " " << c[1] << " " << c[2] << " " << c[3] << "\n";
  } else {
    f << "CELLS " << mesh.num_cells() << " " << mesh.num_cells() * 5 << "\n";
    for (const auto& c : mesh.cells) f << "4 " << c[0] << " " << c[1] << " " << c[2] << " " << c[3] << "\n";
    f << "CELL_TYPES " << mesh.num_cells() << "\n";
    for (int c = 0; c < mesh.num_cells(); ++c) f << "9\n";  // VTK_QUAD
  }
  if (!cell_data.empty() || !cell_vectors.empty()) {
    f << "CELL_DATA " << mesh.num_cells() << "\n";
    for (const auto& [name, values] : cell_data) {
      require(values.size() == mesh.num_cells(), "write_vtk: cell data size mismatch");
      f << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      for (int c = 0; c < values.size(); ++c) {
        print_number(f, values[c]);
        f << "\n";
      }
    }
    for (const auto& [name, values] : cell_vectors) {
      require(values.rows() == mesh.num_cells() && values.cols() == 3,
              "write_vtk: cell vector size mismatch");
      f << "VECTORS " << name << " double\n";
      for (int c = 0; c < values.rows(); ++c) {
        print_number(f, values(c, 0));
        f << " ";
        print_number(f, values(c, 1));
        f << " ";
        print_number(f, values(c, 2));
        f << "\n";
      }
    }
  }
  require(f.good(), "write_vtk: write failed");
}

}  // namespace feinn
