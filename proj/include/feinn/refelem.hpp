#pragma once

#include <memory>
#include <vector>

#include "feinn/common.hpp"

namespace feinn {

enum class Family { Nedelec, RaviartThomas, LagrangeCG, LagrangeDG };
enum class Continuity { CG, DG };

struct DofEntity {
  enum Kind { Vertex, Edge, Interior } kind = Interior;
  int index = 0;   // local vertex or edge id
  int moment = 0;  // moment index within the entity
};

/// A moment functional evaluated as a weighted sum of point values:
/// dof(f) = sum_m coefs[m] . f(points[m]). Edge moments carry the edge
/// tangent (Nedelec) or normal (Raviart-Thomas) inside the coefficients.
struct DofFunctional {
  std::vector<Vec2> points;  // parametric
  std::vector<VecX> coefs;   // one per point, length = ncomp
  DofEntity entity;
};

/// Reference element on [-1,1]^2. Shape functions are expressed in a tensor
/// Legendre prebasis; the coefficient matrix is obtained by inverting the
/// DOF-by-prebasis Vandermonde matrix.
class ElementDef {
 public:
  Family family = Family::LagrangeCG;
  int order = 1;
  int ncomp = 1;  // field components in the reference frame
  int ndofs = 0;
  int dofs_per_edge = 0;
  std::vector<DofFunctional> dofs;

  struct PrebasisTerm {
    int comp, ix, iy;  // P_ix(x) * P_iy(y) placed in component comp
  };
  std::vector<PrebasisTerm> prebasis;
  MatX shape_coeffs;  // npre x ndofs

  /// Values of all shape functions: out is ndofs x ncomp.
  void shape_values(const Vec2& xhat, MatX& out) const;
  /// Scalar 2D curls (vector elements only).
  void shape_curls(const Vec2& xhat, VecX& out) const;
  /// Divergences (vector elements only).
  void shape_divs(const Vec2& xhat, VecX& out) const;
  /// Parametric gradients (scalar elements only): out is ndofs x 2.
  void shape_grads(const Vec2& xhat, MatX& out) const;

  /// Apply DOF functional i to an arbitrary field given in reference coords.
  double apply_dof(int i, const std::function<void(const Vec2&, double*)>& f) const;
};

using ElementPtr = std::shared_ptr<const ElementDef>;

ElementPtr nedelec_quad(int k);
ElementPtr raviart_thomas_quad(int k);
ElementPtr lagrange_quad(int k, Continuity continuity);

/// Rescale every DOF functional and rebuild the dual shape basis. The spanned
/// space is unchanged; assembled FEM solutions must be invariant.
ElementPtr with_scaled_dofs(const ElementDef& elem, double factor);

/// Legendre polynomial value and derivative.
double legendre(int n, double x);
double legendre_deriv(int n, double x);

}  // namespace feinn
