#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "feinn/common.hpp"
#include "feinn/mesh.hpp"
#include "feinn/refelem.hpp"

namespace feinn {

/// Global finite element space: deterministic entity-wise DOF numbering with
/// inter-element sign reconciliation against the canonical edge orientation.
/// Fields live in the physical frame through the appropriate Piola map:
/// covariant for Nedelec, contravariant for Raviart-Thomas (with the surface
/// variant u = J uhat / sqrt|G| on the sphere).
class FESpace {
 public:
  MeshPtr mesh;
  ElementPtr elem;
  int ndofs = 0;
  bool zero_trace = false;

  /// Per-cell (global dof, sign) in the element's local dof order.
  std::vector<std::vector<std::pair<int, double>>> cell_dofs;

  /// Dirichlet constraint mask and free-dof numbering (identity when not a
  /// zero-trace subspace).
  std::vector<bool> constrained;
  std::vector<int> free_index;  // global -> free position or -1
  std::vector<int> free_dofs;   // free position -> global
  int nfree = 0;

  /// First (cell, local edge, flip) referencing each edge.
  struct EdgeOwner {
    int cell, local_edge;
    bool flip;
  };
  std::vector<EdgeOwner> edge_owner;

  bool surface() const { return mesh->surface; }
  bool vector_valued() const { return elem->ncomp == 2; }
  /// Components of the physical field (1 scalar, 2 flat vector, 3 surface vector).
  int field_ncomp() const { return vector_valued() ? mesh->ambient_dim : 1; }

  /// Local coefficients of a global DOF vector on one cell (signs applied).
  VecX local_coeffs(int cell, const VecX& dofs_full) const;

  /// Restrict a full vector to free DOFs / extend free values by zero.
  VecX restrict_free(const VecX& full) const;
  VecX extend_free(const VecX& free) const;
};

using SpacePtr = std::shared_ptr<const FESpace>;

SpacePtr build_space(MeshPtr mesh, ElementPtr elem);

/// Mark all DOFs on boundary entities as constrained (value zero).
SpacePtr zero_trace_subspace(const SpacePtr& space);

/// Lowest-order space of the same family on the (k-1)-times uniformly refined
/// mesh; dimension matches the trial space. Returns the input space at k = 1.
SpacePtr linearized_test_space(const SpacePtr& trial);

/// Moment interpolation of an evaluable field (zero on constrained DOFs).
VecX interpolate(const FESpace& space, const Field& f);

/// Offset function: boundary moments of g, zero on interior DOFs.
VecX dirichlet_offset(const FESpace& space, const Field& g);

/// Precomputed sparse map from stacked field samples at fixed physical points
/// to DOF values. Sample layout: sample[p * ncomp + c] = component c at point p.
struct InterpolationPlan {
  int ncomp = 0;
  std::vector<Vec3> points;
  SpMat P;  // ndofs x (npoints * ncomp)

  VecX apply(const VecX& samples) const { return P * samples; }
  VecX apply_transpose(const VecX& dof_cotangent) const { return P.transpose() * dof_cotangent; }
  /// Points as a batch matrix (rows) with the mesh's ambient dimension.
  MatX point_matrix(int ambient_dim) const;
};

InterpolationPlan interpolation_plan(const FESpace& space);

/// Evaluate a global FE function (full DOF vector) at physical points.
/// `values` is resized to npoints x field_ncomp. The derivative output, when
/// requested, holds the scalar curl (Nedelec), divergence (Raviart-Thomas,
/// surface divergence on the sphere) or is unsupported for Lagrange.
void eval_fe_function(const FESpace& space, const VecX& dofs_full,
                      const std::vector<Vec3>& points, MatX& values, VecX* deriv = nullptr);

/// Shape tables at fixed reference points (used by assembly and error loops).
struct ShapeTable {
  std::vector<Vec2> points;
  std::vector<MatX> values;          // per point: ndofs x ncomp
  std::vector<VecX> curls_or_divs;   // per point (vector elements)
  std::vector<MatX> grads;           // per point (scalar elements): ndofs x 2
};
ShapeTable shape_table(const ElementDef& elem, const std::vector<Vec2>& points);

/// L2 and curl/div-seminorm errors of a FE function against an exact field.
struct ErrorNorms {
  double l2 = 0.0;
  double dseminorm = 0.0;  // curl or div part
  double full() const { return std::sqrt(l2 * l2 + dseminorm * dseminorm); }
};
ErrorNorms fe_error_norms(const FESpace& space, const VecX& dofs_full, const Field& exact,
                          const Field* exact_deriv, int quad_per_axis);

/// Norms of the exact field itself (for relative errors).
ErrorNorms field_norms(const Mesh& mesh, const Field& f, const Field* f_deriv, int quad_per_axis);

/// Point-evaluation operator: rows are (location, observed component) pairs in
/// location-major order, columns are global DOFs.
SpMat observation_matrix(const FESpace& space, const std::vector<Vec3>& locations,
                         const std::vector<int>& components);

double edge_dof_sign(bool flip, int moment);

}  // namespace feinn
