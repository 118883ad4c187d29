#include "feinn/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace feinn {

namespace {

// Legendre P_n and its derivative via the three-term recurrence.
void legendre_pair(int n, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  if (n == 0) {
    p = 1.0;
    dp = 0.0;
    return;
  }
  for (int k = 1; k < n; ++k) {
    double p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1);
    p0 = p1;
    p1 = p2;
  }
  p = p1;
  dp = n * (x * p1 - p0) / (x * x - 1.0);
}

GaussRule compute_rule(int n) {
  GaussRule rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Chebyshev initial guess, Newton refinement.
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double p, dp;
    for (int it = 0; it < 100; ++it) {
      legendre_pair(n, x, p, dp);
      double dx = -p / dp;
      x += dx;
      if (std::abs(dx) < 1e-15) break;
    }
    legendre_pair(n, x, p, dp);
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.points[i] = -x;
    rule.points[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.points[n / 2] = 0.0;
  return rule;
}

}  // namespace

const GaussRule& gauss_legendre(int n) {
  require(n >= 1 && n <= 64, "gauss_legendre: order out of range");
  static std::map<int, GaussRule> cache;
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute_rule(n)).first;
  return it->second;
}

QuadRule tensor_rule(int n_per_axis) {
  const GaussRule& g = gauss_legendre(n_per_axis);
  QuadRule q;
  q.points.reserve(n_per_axis * n_per_axis);
  q.weights.reserve(n_per_axis * n_per_axis);
  for (int j = 0; j < n_per_axis; ++j)
    for (int i = 0; i < n_per_axis; ++i) {
      q.points.emplace_back(g.points[i], g.points[j]);
      q.weights.push_back(g.weights[i] * g.weights[j]);
    }
  return q;
}

}  // namespace feinn
