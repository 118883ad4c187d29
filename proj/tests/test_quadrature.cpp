#include "doctest.h"
#include "feinn/quadrature.hpp"

using namespace feinn;

TEST_CASE("gauss rules integrate polynomials exactly") {
  for (int n = 1; n <= 12; ++n) {
    const GaussRule& g = gauss_legendre(n);
    double wsum = 0.0;
    for (double w : g.weights) wsum += w;
    CHECK(wsum == doctest::Approx(2.0).epsilon(1e-14));
    // x^(2n-1) integrates to zero; x^(2n-2) to 2/(2n-1).
    double odd = 0.0, even = 0.0;
    for (size_t i = 0; i < g.points.size(); ++i) {
      odd += g.weights[i] * std::pow(g.points[i], 2 * n - 1);
      even += g.weights[i] * std::pow(g.points[i], 2 * n - 2);
    }
    CHECK(std::abs(odd) < 1e-13);
    CHECK(even == doctest::Approx(2.0 / (2 * n - 1)).epsilon(1e-12));
  }
}

TEST_CASE("tensor rule covers the square") {
  QuadRule q = tensor_rule(3);
  CHECK(q.points.size() == 9);
  double area = 0.0, moment = 0.0;
  for (size_t i = 0; i < q.points.size(); ++i) {
    area += q.weights[i];
    moment += q.weights[i] * q.points[i].x() * q.points[i].x() * q.points[i].y() * q.points[i].y();
  }
  CHECK(area == doctest::Approx(4.0));
  CHECK(moment == doctest::Approx(4.0 / 9.0));
}
