#include "feinn/manufactured.hpp"

#include <cmath>
#include <map>
#include <random>

namespace feinn {

namespace {

ManufacturedCase make_maxwell_smooth() {
  ManufacturedCase c;
  c.id = "maxwell-smooth";
  c.u = Field{2, [](const Vec3& p, double* out) {
                out[0] = std::cos(4.6 * p.x()) * std::cos(3.4 * p.y());
                out[1] = std::sin(3.2 * p.x()) * std::sin(4.8 * p.y());
              }};
  c.deriv = Field{1, [](const Vec3& p, double* out) {
                    out[0] = 3.2 * std::cos(3.2 * p.x()) * std::sin(4.8 * p.y()) +
                             3.4 * std::cos(4.6 * p.x()) * std::sin(3.4 * p.y());
                  }};
  c.kappa = constant_scalar(1.0);
  c.f = Field{2, [](const Vec3& p, double* out) {
                const double dyc = 3.2 * 4.8 * std::cos(3.2 * p.x()) * std::cos(4.8 * p.y()) +
                                   3.4 * 3.4 * std::cos(4.6 * p.x()) * std::cos(3.4 * p.y());
                const double mdxc = 3.2 * 3.2 * std::sin(3.2 * p.x()) * std::sin(4.8 * p.y()) +
                                    3.4 * 4.6 * std::sin(4.6 * p.x()) * std::sin(3.4 * p.y());
                out[0] = dyc + std::cos(4.6 * p.x()) * std::cos(3.4 * p.y());
                out[1] = mdxc + std::sin(3.2 * p.x()) * std::sin(4.8 * p.y());
              }};
  return c;
}

ManufacturedCase make_maxwell_wavefront() {
  // x-component: circular wave front; y-component: sharp Gaussian peak.
  constexpr double a = 0.05, R = 1.2, s = 50.0;
  constexpr double b = 0.5, A = 1.5, beta = 500.0;
  ManufacturedCase c;
  c.id = "maxwell-wavefront";
  c.u = Field{2, [](const Vec3& p, double* out) {
                const double rho = std::hypot(p.x() + a, p.y() + a);
                out[0] = std::atan(s * (rho - R));
                out[1] = A * std::exp(-beta * ((p.x() - b) * (p.x() - b) +
                                               (p.y() - b) * (p.y() - b)));
              }};
  auto curl = [](const Vec3& p) {
    const double rho = std::hypot(p.x() + a, p.y() + a);
    const double D = 1.0 + s * s * (rho - R) * (rho - R);
    const double E = std::exp(-beta * ((p.x() - b) * (p.x() - b) + (p.y() - b) * (p.y() - b)));
    return -2.0 * A * beta * (p.x() - b) * E - s * (p.y() + a) / (rho * D);
  };
  c.deriv = Field{1, [curl](const Vec3& p, double* out) { out[0] = curl(p); }};
  c.kappa = constant_scalar(1.0);
  c.f = Field{2, [](const Vec3& p, double* out) {
                const double X = p.x() + a, Y = p.y() + a;
                const double rho = std::hypot(X, Y);
                const double D = 1.0 + s * s * (rho - R) * (rho - R);
                const double E =
                    std::exp(-beta * ((p.x() - b) * (p.x() - b) + (p.y() - b) * (p.y() - b)));
                const double common = D / rho + 2.0 * s * s * (rho - R);
                const double rD2 = rho * rho * D * D;
                const double dyc = 4.0 * A * beta * beta * (p.x() - b) * (p.y() - b) * E -
                                   s * (rho * D - Y * Y * common) / rD2;
                const double dxc = -2.0 * A * beta * E +
                                   4.0 * A * beta * beta * (p.x() - b) * (p.x() - b) * E +
                                   s * Y * X * common / rD2;
                out[0] = dyc + std::atan(s * (rho - R));
                out[1] = -dxc + A * E;
              }};
  return c;
}

// Shared inverse-problem state u = (cos(pi x)cos(pi y), sin(pi x)sin(pi y)),
// for which curl curl u = 2 pi^2 u.
void inverse_state(ManufacturedCase& c, std::function<double(const Vec3&)> kappa) {
  c.u = Field{2, [](const Vec3& p, double* out) {
                out[0] = std::cos(M_PI * p.x()) * std::cos(M_PI * p.y());
                out[1] = std::sin(M_PI * p.x()) * std::sin(M_PI * p.y());
              }};
  c.deriv = Field{1, [](const Vec3& p, double* out) {
                    out[0] = 2.0 * M_PI * std::cos(M_PI * p.x()) * std::sin(M_PI * p.y());
                  }};
  c.kappa = scalar_field(kappa);
  c.f = Field{2, [kappa](const Vec3& p, double* out) {
                const double scale = 2.0 * M_PI * M_PI + kappa(p);
                out[0] = scale * std::cos(M_PI * p.x()) * std::cos(M_PI * p.y());
                out[1] = scale * std::sin(M_PI * p.x()) * std::sin(M_PI * p.y());
              }};
}

ManufacturedCase make_inverse_gaussian() {
  ManufacturedCase c;
  c.id = "inverse-gaussian-kappa";
  inverse_state(c, [](const Vec3& p) {
    return 1.0 + 5.0 * std::exp(-5.0 * ((2.0 * p.x() - 1.0) * (2.0 * p.x() - 1.0) +
                                        (p.y() - 0.5) * (p.y() - 0.5)));
  });
  return c;
}

ManufacturedCase make_inverse_rational() {
  ManufacturedCase c;
  c.id = "inverse-rational-kappa";
  inverse_state(c, [](const Vec3& p) {
    return 1.0 / (1.0 + p.x() * p.x() + p.y() * p.y() + (p.x() - 1.0) * (p.x() - 1.0) +
                  (p.y() - 1.0) * (p.y() - 1.0));
  });
  return c;
}

ManufacturedCase make_inverse_jump() {
  ManufacturedCase c;
  c.id = "inverse-jump-kappa";
  auto kappa = [](const Vec3& p) { return p.y() > 2.0 * p.x() ? 1.0 : 10.0; };
  c.u = Field{2, [](const Vec3& p, double* out) {
                out[0] = std::cos(M_PI * p.x()) * std::cos(p.y());
                out[1] = std::sin(p.x()) * std::sin(M_PI * p.y());
              }};
  c.deriv = Field{1, [](const Vec3& p, double* out) {
                    out[0] = std::cos(p.x()) * std::sin(M_PI * p.y()) +
                             std::cos(M_PI * p.x()) * std::sin(p.y());
                  }};
  c.kappa = scalar_field(kappa);
  c.f = Field{2, [kappa](const Vec3& p, double* out) {
                const double dyc = M_PI * std::cos(p.x()) * std::cos(M_PI * p.y()) +
                                   std::cos(M_PI * p.x()) * std::cos(p.y());
                const double mdxc = std::sin(p.x()) * std::sin(M_PI * p.y()) +
                                    M_PI * std::sin(M_PI * p.x()) * std::sin(p.y());
                const double k = kappa(p);
                out[0] = dyc + k * std::cos(M_PI * p.x()) * std::cos(p.y());
                out[1] = mdxc + k * std::sin(p.x()) * std::sin(M_PI * p.y());
              }};
  return c;
}

ManufacturedCase make_darcy_sphere() {
  ManufacturedCase c;
  c.id = "darcy-sphere";
  c.surface = true;
  c.ambient = 3;
  c.u = Field{3, [](const Vec3& p, double* out) {
                const double q = p.squaredNorm();
                const double x = p.x(), y = p.y(), z = p.z();
                out[0] = (y * y * y * z - 2.0 * x * x * y * z + y * z * z * z) / q;
                out[1] = (x * x * x * z - 2.0 * x * y * y * z + x * z * z * z) / q;
                out[2] = (x * x * x * y - 2.0 * x * y * z * z + x * y * y * y) / q;
              }};
  c.p = Field{1, [](const Vec3& p, double* out) { out[0] = -p.x() * p.y() * p.z(); }};
  c.f = Field{1, [](const Vec3& p, double* out) { out[0] = -12.0 * p.x() * p.y() * p.z(); }};
  c.deriv = c.f;  // div_S u = f
  return c;
}

}  // namespace

const ManufacturedCase& manufactured_case(const std::string& id) {
  static const std::map<std::string, ManufacturedCase> registry = [] {
    std::map<std::string, ManufacturedCase> m;
    for (auto&& c : {make_maxwell_smooth(), make_maxwell_wavefront(), make_inverse_gaussian(),
                     make_inverse_rational(), make_inverse_jump(), make_darcy_sphere()})
      m.emplace(c.id, std::move(c));
    return m;
  }();
  auto it = registry.find(id);
  require(it != registry.end(), "unknown manufactured case: " + id);
  return it->second;
}

void verify_case(const ManufacturedCase& c, int npoints, unsigned seed, double tol) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  const double h = 1e-4;
  if (!c.surface) {
    for (int t = 0; t < npoints; ++t) {
      const Vec3 p(u(rng), u(rng), 0.0);
      if (c.id == "inverse-jump-kappa" && std::abs(p.y() - 2.0 * p.x()) < 10 * h) continue;
      auto ux = [&](double x, double y, int comp) {
        double v[2];
        c.u.eval(Vec3(x, y, 0), v);
        return v[comp];
      };
      // curl u and curl curl u by central differences
      auto curl = [&](double x, double y) {
        return (ux(x + h, y, 1) - ux(x - h, y, 1)) / (2 * h) -
               (ux(x, y + h, 0) - ux(x, y - h, 0)) / (2 * h);
      };
      const double cc0 = (curl(p.x(), p.y() + h) - curl(p.x(), p.y() - h)) / (2 * h);
      const double cc1 = -(curl(p.x() + h, p.y()) - curl(p.x() - h, p.y())) / (2 * h);
      double fv[2], uv[2];
      c.f.eval(p, fv);
      c.u.eval(p, uv);
      const double kap = c.kappa.scalar(p);
      const double scale = std::abs(fv[0]) + std::abs(fv[1]) + 1.0;
      require(std::abs(cc0 + kap * uv[0] - fv[0]) / scale < tol,
              c.id + ": source term inconsistent with the strong form (x)");
      require(std::abs(cc1 + kap * uv[1] - fv[1]) / scale < tol,
              c.id + ": source term inconsistent with the strong form (y)");
      require(std::abs(curl(p.x(), p.y()) - c.deriv.scalar(p)) / scale < tol,
              c.id + ": analytic curl inconsistent");
    }
    return;
  }
  // Sphere: u must be tangent and equal to -grad_S p.
  std::uniform_real_distribution<double> un(-1.0, 1.0);
  for (int t = 0; t < npoints; ++t) {
    Vec3 x = Vec3(un(rng), un(rng), un(rng)).normalized();
    VecX uv(3);
    c.u.eval(x, uv.data());
    require(std::abs(x.dot(Vec3(uv[0], uv[1], uv[2]))) < tol, c.id + ": flux is not tangent");
    Vec3 grad;
    for (int d = 0; d < 3; ++d) {
      Vec3 xp = x, xm = x;
      xp[d] += h;
      xm[d] -= h;
      grad[d] = (c.p.scalar(xp.normalized()) - c.p.scalar(xm.normalized())) / (xp - xm).norm();
    }
    Vec3 gs = grad - x * x.dot(grad);
    require((gs + Vec3(uv[0], uv[1], uv[2])).norm() < 100 * tol,
            c.id + ": flux is not -grad_S p");
  }
}

}  // namespace feinn
