#pragma once

#include "feinn/common.hpp"
#include "feinn/fespace.hpp"

namespace feinn {

/// Scalar coefficient: analytic, or a FE function on the trial mesh
/// (evaluated through its own space's shape functions at quadrature points).
struct Coefficient {
  Field analytic;
  SpacePtr fe_space;  // null -> analytic
  VecX fe_dofs;

  bool is_fe() const { return fe_space != nullptr; }
  static Coefficient constant(double c) { return {constant_scalar(c), nullptr, {}}; }
  static Coefficient function(Field f) { return {std::move(f), nullptr, {}}; }
  static Coefficient fe(SpacePtr sp, VecX dofs) {
    return {{}, std::move(sp), std::move(dofs)};
  }
};

/// curl-curl + mass problem: find u in the trial space with
/// a(u, v) = (curl u, curl v) + (kappa u, v) = (f, v) - a(offset, v).
/// The test space is the (possibly linearised) Petrov-Galerkin partner on a
/// factor-k refined mesh; trial and test may be zero-trace or full spaces.
struct MaxwellProblem {
  SpacePtr trial;
  SpacePtr test;
  Coefficient kappa;
  Field f;
  VecX offset;  // full-length trial vector; empty means zero
  int quad_n = 0;  // per-axis Gauss points per test cell; 0 -> order + 2

  int quad_points() const { return quad_n > 0 ? quad_n : trial->elem->order + 2; }
};

struct AssembledSystem {
  SpMat A;  // free test dofs x free trial dofs
  VecX b;
};

AssembledSystem assemble_maxwell(const MaxwellProblem& prob);

/// Residual r = A u_free - b from a cached assembly.
VecX residual_vector(const AssembledSystem& sys, const VecX& u_free);

/// Matrix-free residual a(u_h + offset, test basis) - l(test basis); must agree
/// with the cached path.
VecX residual_vector_matfree(const MaxwellProblem& prob, const VecX& u_free);

/// Boundary coupling for the modified residual of the boundary-observation
/// inverse problem: Bd(j, i) = contour integral of (test_j x n) curl(trial_i).
SpMat assemble_boundary_curl_matrix(const MaxwellProblem& prob);

/// Modified residual r_i = a(u_h, v_i) - l(v_i) - boundary term, on full spaces.
VecX modified_residual_boundary_obs(const MaxwellProblem& prob, const AssembledSystem& sys,
                                    const SpMat& boundary_matrix, const VecX& u_full);

enum class InnerProduct { L2, Hcurl, Hdiv };

/// Gram matrix of the inner product on the free DOFs of one space.
SpMat gram_matrix(const FESpace& space, InnerProduct inner, int quad_n = 0);

/// Direct sparse solve (LU with pivoting; Cholesky when spd). Verifies the
/// relative residual and reports singularities.
VecX solve_sparse(const SpMat& A, const VecX& b, bool spd = false);

/// Mixed Darcy on the closed sphere with a scalar Lagrange multiplier fixing
/// the pressure mean: unknowns (flux, pressure, lambda).
struct DarcySphereProblem {
  SpacePtr flux;      // Raviart-Thomas on the cubed sphere
  SpacePtr pressure;  // DG_0
  Field f;
  int quad_n = 0;

  int quad_points() const { return quad_n > 0 ? quad_n : flux->elem->order + 3; }
};

struct DarcySystem {
  SpMat A;
  VecX b;
  int nu = 0, np = 0;  // flux / pressure block sizes; total dim nu + np + 1
};

DarcySystem assemble_darcy_sphere(const DarcySphereProblem& prob);
VecX residual_vector_darcy(const DarcySystem& sys, const VecX& x);

/// Adjoint of the residual with respect to the coefficient DOFs:
/// out_j = sum_i w_i d r_i / d kappa_j = integral N_j (u_h + offset) . w_h,
/// where w is a free-dof vector on the test space and the coefficient is a FE
/// function on the trial mesh.
VecX kappa_gradient(const MaxwellProblem& prob, const VecX& state_full_with_offset,
                    const VecX& w_test_free);

}  // namespace feinn
