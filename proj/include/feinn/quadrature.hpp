#pragma once

#include <vector>

#include "feinn/common.hpp"

namespace feinn {

/// Gauss-Legendre rule on [-1, 1], exact for polynomials of degree 2n-1.
struct GaussRule {
  std::vector<double> points;
  std::vector<double> weights;
};

const GaussRule& gauss_legendre(int n);

/// Tensor-product rule on the reference square [-1, 1]^2.
struct QuadRule {
  std::vector<Vec2> points;
  std::vector<double> weights;
};

QuadRule tensor_rule(int n_per_axis);

}  // namespace feinn
