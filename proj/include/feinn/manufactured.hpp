#pragma once

#include <string>

#include "feinn/common.hpp"

namespace feinn {

/// Closed-form benchmark solution with source terms consistent with the
/// strong PDE. Flat cases solve curl curl u + kappa u = f on the unit square;
/// the sphere case solves the mixed Darcy system div_S u = f, u = -grad_S p.
struct ManufacturedCase {
  std::string id;
  bool surface = false;
  int ambient = 2;
  Field u;       // state / flux
  Field deriv;   // scalar curl (flat) or surface divergence (sphere)
  Field f;       // source
  Field kappa;   // coefficient (flat cases)
  Field p;       // pressure (sphere case)
};

const ManufacturedCase& manufactured_case(const std::string& id);

/// Finite-difference consistency spot check of the case's analytic fields at
/// random points; throws when derivatives and sources disagree.
void verify_case(const ManufacturedCase& c, int npoints, unsigned seed, double tol);

}  // namespace feinn
