#pragma once

#include <map>
#include <string>

#include "feinn/mesh.hpp"

namespace feinn {

/// Legacy ASCII VTK dump: POLYDATA for the cubed sphere, UNSTRUCTURED_GRID for
/// flat meshes. `cell_data` entries must have one value per cell;
/// `cell_vectors` one packed (x,y,z) triple per cell.
void write_vtk(const Mesh& mesh, const std::string& path,
               const std::map<std::string, VecX>& cell_data = {},
               const std::map<std::string, MatX>& cell_vectors = {});

}  // namespace feinn
