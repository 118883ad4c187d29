#pragma once

#include <array>
#include <memory>
#include <vector>

#include "feinn/common.hpp"

namespace feinn {

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

/// Per-cell use of a global edge. `flip` is set when the cell-local traversal
/// (always +x or +y in reference coordinates) runs against the canonical
/// low-vertex-id -> high-vertex-id direction of the edge.
struct EdgeUse {
  int edge = -1;
  bool flip = false;
};

/// Geometry of the cell map at one parametric point.
struct CellGeometry {
  Vec3 x = Vec3::Zero();          // physical point (z = 0 on flat meshes)
  Mat32 J = Mat32::Zero();        // Jacobian of the cell map
  Mat2 G = Mat2::Zero();          // first fundamental form J^T J
  double sqrt_detG = 0.0;         // area element
  double detJ = 0.0;              // signed 2x2 determinant on flat meshes; = sqrt_detG on surfaces
};

/// Quadrilateral mesh: either a Cartesian grid of an axis-aligned rectangle
/// or the cubed-sphere surface mesh of the unit sphere. The reference cell is
/// [-1,1]^2; local vertex order is counter-clockwise starting at the lower
/// left corner, local edges are (bottom, right, top, left) with reference
/// traversal directions +x, +y, +x, +y.
class Mesh {
 public:
  bool surface = false;  // true for the cubed sphere
  int ambient_dim = 2;   // 2 flat, 3 surface

  // Flat grids only.
  int nx = 0, ny = 0;
  Rect bounds;

  // Cubed sphere only: cells per panel edge.
  int ne = 0;

  std::vector<Vec3> vertices;
  std::vector<std::array<int, 4>> cells;        // vertex ids, CCW
  std::vector<std::array<int, 2>> edges;        // canonical orientation low -> high id
  std::vector<std::array<EdgeUse, 4>> cell_edges;
  std::vector<bool> edge_boundary;

  // Cubed sphere: per-cell gnomonic patch (panel frame + angle ranges).
  struct PanelCell {
    Vec3 center, axis_a, axis_b;
    double xi0, xi1, eta0, eta1;
  };
  std::vector<PanelCell> panel_cells;

  int num_cells() const { return static_cast<int>(cells.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_boundary_edges() const;

  /// Map, Jacobian, first fundamental form and area element at a parametric point.
  CellGeometry cell_geometry(int cell, const Vec2& xhat) const;

  /// Locate the cell containing a physical point and its parametric coordinates.
  /// Throws when the point lies outside the domain (flat meshes).
  void locate(const Vec3& x, int& cell, Vec2& xhat) const;
};

using MeshPtr = std::shared_ptr<const Mesh>;

MeshPtr build_cartesian(int nx, int ny, const Rect& bounds);
MeshPtr uniform_refine(const MeshPtr& mesh, int times);
/// Split every cell into factor x factor subcells (mesh size h / factor).
MeshPtr refine_by_factor(const MeshPtr& mesh, int factor);
MeshPtr build_cubed_sphere(int ne);

}  // namespace feinn
