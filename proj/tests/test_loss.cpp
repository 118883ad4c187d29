#include <cmath>
#include <random>

#include "doctest.h"
#include "feinn/loss.hpp"
#include "oracles.hpp"

using namespace feinn;
using namespace feinn::testing;

namespace {

// Central-difference check of an objective's gradient at ncoord random
// parameter coordinates.
void check_gradient(const Objective& obj, const VecX& theta, int ncoord, unsigned seed,
                    double tol) {
  VecX g(theta.size());
  const double f0 = obj(theta, g);
  (void)f0;
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(theta.size()) - 1);
  const double h = 1e-5;
  VecX dummy(theta.size());
  for (int t = 0; t < ncoord; ++t) {
    const int i = pick(rng);
    VecX tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double fd = (obj(tp, dummy) - obj(tm, dummy)) / (2 * h);
    const double scale = std::max({1.0, std::abs(fd), std::abs(g[i])});
    CHECK(std::abs(fd - g[i]) / scale < tol);
  }
}

MatX eval_at_points(const FESpace& sp, const VecX& dofs_full, const InterpolationPlan& plan) {
  MatX vals;
  eval_fe_function(sp, dofs_full, plan.points, vals);
  return vals;
}

}  // namespace

TEST_CASE("residual-vector loss: fem-solution networks, FD gradients, dense pipeline") {
  const auto& mc = manufactured_case("maxwell-smooth");
  auto mesh = build_cartesian(2, 2, {0, 0, 1, 1});
  Setup s = maxwell_setup(mc, mesh, 1);
  InterpolationPlan plan = interpolation_plan(*s.trial);
  auto sys = assemble_maxwell(s.prob);
  VecX u_free = solve_sparse(sys.A, sys.b);
  VecX u_fem_full = s.trial->extend_free(u_free) + s.offset;

  // network placed on the fem solution via a least-squares last layer
  MatX targets = eval_at_points(*s.full, u_fem_full, plan);
  MatX X = plan.point_matrix(2);
  FittedNet net = lsq_fit_net(X, targets, 60, 21);
  REQUIRE(net.fit_residual < 1e-9);
  MaxwellFeinnLoss loss(s.prob, plan, net.arch, LossSpec{LossKind::ResidualL2, DualNorm::Unorm});
  VecX g;
  CHECK(loss.eval(net.theta, &g) < 1e-8);

  // FD gradients at a generic point
  MLPArch small = make_arch(2, 2, 8, 2, Activation::Tanh);
  MaxwellFeinnLoss loss2(s.prob, plan, small, LossSpec{});
  check_gradient(loss2.objective(), glorot_init(small, 3), 10, 77, 1e-6);

  // dense pipeline: interpolate the network as a field, dense residual
  VecX theta = glorot_init(small, 9);
  Field nn_field{2, [&](const Vec3& x, double* out) {
                   MatX X1(1, 2);
                   X1 << x.x(), x.y();
                   MatX Y = forward(small, theta, X1);
                   out[0] = Y(0, 0);
                   out[1] = Y(0, 1);
                 }};
  VecX u_dofs = interpolate(*s.trial, nn_field);
  DenseSystem ds = dense_assemble(*s.trial, *s.test, mc.kappa, mc.f, s.prob.quad_points());
  AssembledSystem ref = reduce(ds, *s.trial, *s.test, s.offset);
  VecX r_ref = MatX(ref.A) * s.trial->restrict_free(u_dofs) - ref.b;
  const double expected = r_ref.squaredNorm();
  const double got = loss2.eval(theta, nullptr);
  CHECK(std::abs(got - expected) / expected < 1e-10);
}

TEST_CASE("preconditioned losses: dense oracle, Riesz identity, zero residual") {
  const auto& mc = manufactured_case("maxwell-smooth");
  auto mesh = build_cartesian(3, 3, {0, 0, 1, 1});
  Setup s = maxwell_setup(mc, mesh, 1);
  InterpolationPlan plan = interpolation_plan(*s.trial);
  MLPArch arch = make_arch(2, 2, 10, 2, Activation::Tanh);
  VecX theta = glorot_init(arch, 4);

  MaxwellFeinnLoss unorm(s.prob, plan, arch, LossSpec{LossKind::Preconditioned, DualNorm::Unorm});
  MaxwellFeinnLoss l2(s.prob, plan, arch, LossSpec{LossKind::Preconditioned, DualNorm::L2});
  MaxwellFeinnLoss plain(s.prob, plan, arch, LossSpec{});

  // dense r^T B^{-1} r with an independently assembled Gram
  auto sys = assemble_maxwell(s.prob);
  MatX X = plan.point_matrix(2);
  MatX Y = forward(arch, theta, X);
  VecX samples(Y.size());
  for (int r = 0; r < Y.rows(); ++r)
    for (int c = 0; c < 2; ++c) samples[r * 2 + c] = Y(r, c);
  VecX u_free = s.trial->restrict_free(plan.apply(samples));
  VecX r = sys.A * u_free - sys.b;
  MatX Bd = dense_hcurl_gram(*s.test, s.prob.quad_points());
  VecX z = Bd.ldlt().solve(r);
  CHECK(std::abs(unorm.eval(theta, nullptr) - r.dot(z)) / r.dot(z) < 1e-10);

  // Riesz identity: the U-norm of the Riesz representative equals r^T B^{-1} r
  Field zero2{2, [](const Vec3&, double* o) { o[0] = o[1] = 0.0; }};
  Field zero1{1, [](const Vec3&, double* o) { o[0] = 0.0; }};
  ErrorNorms zn = fe_error_norms(*s.test, s.test->extend_free(z), zero2, &zero1, 6);
  const double unorm_sq = zn.l2 * zn.l2 + zn.dseminorm * zn.dseminorm;
  CHECK(std::abs(unorm_sq - r.dot(z)) / r.dot(z) < 1e-10);

  // FD gradients for both dual norms
  check_gradient(unorm.objective(), theta, 10, 5, 1e-6);
  check_gradient(l2.objective(), theta, 10, 6, 1e-6);

  // fem-solution network: both norms drop below 1e-8
  VecX u_fem_full = s.trial->extend_free(solve_sparse(sys.A, sys.b)) + s.offset;
  FittedNet net = lsq_fit_net(X, eval_at_points(*s.full, u_fem_full, plan), 80, 31);
  REQUIRE(net.fit_residual < 1e-8);
  MaxwellFeinnLoss unorm_f(s.prob, plan, net.arch,
                           LossSpec{LossKind::Preconditioned, DualNorm::Unorm});
  MaxwellFeinnLoss l2_f(s.prob, plan, net.arch, LossSpec{LossKind::Preconditioned, DualNorm::L2});
  MaxwellFeinnLoss plain_f(s.prob, plan, net.arch, LossSpec{});
  CHECK(unorm_f.eval(net.theta, nullptr) < 1e-8);
  CHECK(l2_f.eval(net.theta, nullptr) < 1e-8);
  CHECK(plain_f.eval(net.theta, nullptr) < 1e-8);

  // zero data: zero network gives exactly zero loss and gradient
  Field zerof{2, [](const Vec3&, double* o) { o[0] = o[1] = 0.0; }};
  ManufacturedCase zc;
  zc.u = zerof;
  zc.kappa = constant_scalar(1.0);
  zc.f = zerof;
  Setup z0 = maxwell_setup(zc, mesh, 1);
  MLPArch zarch = make_arch(2, 1, 6, 2, Activation::Tanh);
  VecX ztheta = VecX::Zero(param_count(zarch));  // all-zero net outputs zero
  MaxwellFeinnLoss zloss(z0.prob, plan, zarch,
                         LossSpec{LossKind::Preconditioned, DualNorm::Unorm});
  VecX zg;
  CHECK(zloss.eval(ztheta, &zg) == 0.0);
  CHECK(zg.norm() == 0.0);
}

TEST_CASE("datafit loss descends to its targets") {
  MLPArch arch = make_arch(2, 2, 8, 2, Activation::Tanh);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatX X(20, 2), Y(20, 2);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  for (int i = 0; i < Y.size(); ++i) Y.data()[i] = u(rng);
  DataFitLoss fit(X, Y, arch);
  check_gradient(fit.objective(), glorot_init(arch, 8), 10, 9, 1e-6);
}

TEST_CASE("darcy multifield loss") {
  const auto& mc = manufactured_case("darcy-sphere");
  auto mesh = build_cubed_sphere(2);
  auto rt = build_space(mesh, raviart_thomas_quad(1));
  auto dg = build_space(mesh, lagrange_quad(0, Continuity::DG));
  DarcySphereProblem prob{rt, dg, mc.f, 0};
  InterpolationPlan up = interpolation_plan(*rt);
  InterpolationPlan pp = interpolation_plan(*dg);

  MLPArch ua = make_arch(3, 1, 10, 3, Activation::Tanh);
  MLPArch pa = make_arch(3, 1, 8, 1, Activation::Tanh);
  DarcyFeinnLoss loss(prob, up, pp, ua, pa, LossSpec{});

  // zero networks: loss = |b|^2 of the mixed system
  VecX theta0 = VecX::Zero(loss.total_params());
  auto sys = assemble_darcy_sphere(prob);
  CHECK(std::abs(loss.eval(theta0, nullptr) - sys.b.squaredNorm()) / sys.b.squaredNorm() < 1e-12);

  // FD gradients (plain and preconditioned)
  VecX theta(loss.total_params());
  theta.head(param_count(ua)) = glorot_init(ua, 3);
  theta.segment(param_count(ua), param_count(pa)) = glorot_init(pa, 4);
  theta[loss.total_params() - 1] = 0.37;
  check_gradient(loss.objective(), theta, 10, 11, 1e-6);
  DarcyFeinnLoss ploss(prob, up, pp, ua, pa, LossSpec{LossKind::Preconditioned, DualNorm::Unorm});
  check_gradient(ploss.objective(), theta, 6, 12, 1e-6);

  // networks fitted to the fem mixed solution drive the loss below 1e-8
  VecX x = solve_sparse(sys.A, sys.b);
  MatX uvals;
  eval_fe_function(*rt, x.head(sys.nu), up.points, uvals);
  MatX pvals;
  eval_fe_function(*dg, x.segment(sys.nu, sys.np), pp.points, pvals);
  FittedNet unet = lsq_fit_net(up.point_matrix(3), uvals, 120, 41);
  FittedNet pnet = lsq_fit_net(pp.point_matrix(3), pvals, 60, 42);
  REQUIRE(unet.fit_residual < 1e-8);
  REQUIRE(pnet.fit_residual < 1e-8);
  DarcyFeinnLoss floss(prob, up, pp, unet.arch, pnet.arch, LossSpec{});
  VecX ftheta(floss.total_params());
  ftheta.head(param_count(unet.arch)) = unet.theta;
  ftheta.segment(param_count(unet.arch), param_count(pnet.arch)) = pnet.theta;
  ftheta[floss.total_params() - 1] = x[sys.nu + sys.np];
  CHECK(floss.eval(ftheta, nullptr) < 1e-8);

  // adding a constant to the pressure network only moves the zero-mean row
  VecX theta_c = theta;
  theta_c[param_count(ua) + param_count(pa) - 1] += 0.5;  // pressure output bias
  VecX r_a = residual_vector_darcy(sys, loss.interpolated(theta));
  VecX r_b = residual_vector_darcy(sys, loss.interpolated(theta_c));
  VecX diff = r_b - r_a;
  // the shift moves only the zero-mean row, by 0.5 x (quadrature sphere area)
  double area = 0.0;
  QuadRule q = tensor_rule(prob.quad_points());
  for (int c = 0; c < mesh->num_cells(); ++c)
    for (size_t i = 0; i < q.points.size(); ++i)
      area += q.weights[i] * mesh->cell_geometry(c, q.points[i]).sqrt_detG;
  CHECK(std::abs(diff[sys.nu + sys.np] - 0.5 * area) < 1e-10);
  diff[sys.nu + sys.np] = 0.0;
  CHECK(diff.lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("inverse loss: alpha = 0 leaves the coefficient untouched; FD gradients") {
  const auto& mc = manufactured_case("inverse-gaussian-kappa");
  auto mesh = build_cartesian(3, 3, {0, 0, 1, 1});
  auto full = build_space(mesh, nedelec_quad(1));
  auto trial = zero_trace_subspace(full);
  auto test = linearized_test_space(trial);
  auto cg = build_space(mesh, lagrange_quad(1, Continuity::CG));
  VecX offset = dirichlet_offset(*full, mc.u);
  MaxwellProblem prob{trial, test, Coefficient::fe(cg, VecX::Zero(cg->ndofs)), mc.f, offset, 0};
  InterpolationPlan uplan = interpolation_plan(*trial);
  InterpolationPlan kplan = interpolation_plan(*cg);

  MLPArch ua = make_arch(2, 2, 10, 2, Activation::Tanh);
  MLPArch ka = make_arch(2, 2, 8, 1, Activation::Softplus, true);

  // observations of the interpolated exact state on a small lattice
  std::vector<Vec3> locs;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      locs.emplace_back(0.005 + 0.99 * i / 4.0, 0.005 + 0.99 * j / 4.0, 0.0);
  VecX u_exact_full = interpolate(*full, mc.u);
  SpMat O = observation_matrix(*trial, locs, {0, 1});
  ObservationSet obs;
  obs.locations = locs;
  obs.components = {0, 1};
  obs.values = O * u_exact_full;

  InverseLoss loss(prob, uplan, kplan, ua, ka, obs, LossSpec{}, false);
  VecX theta(param_count(ua) + param_count(ka));
  theta.head(param_count(ua)) = glorot_init(ua, 5);
  theta.tail(param_count(ka)) = glorot_init(ka, 6);

  // alpha = 0: pure misfit, no coefficient gradient
  loss.set_alpha(0.0);
  VecX g;
  loss.eval(theta, &g);
  CHECK(g.tail(param_count(ka)).norm() == 0.0);
  CHECK_THROWS(loss.set_alpha(-1.0));

  // network fitted to the exact interpolant: misfit below the fit tolerance
  MatX targets;
  eval_fe_function(*full, u_exact_full, uplan.points, targets);
  FittedNet unet = lsq_fit_net(uplan.point_matrix(2), targets, 80, 51);
  REQUIRE(unet.fit_residual < 1e-8);
  InverseLoss floss(prob, uplan, kplan, unet.arch, ka, obs, LossSpec{}, false);
  floss.set_alpha(0.0);
  VecX ftheta(param_count(unet.arch) + param_count(ka));
  ftheta.head(param_count(unet.arch)) = unet.theta;
  ftheta.tail(param_count(ka)) = glorot_init(ka, 6);
  CHECK(floss.eval(ftheta, nullptr) < 1e-10);

  // full-loss FD gradients, plain and preconditioned
  loss.set_alpha(0.004);
  check_gradient(loss.objective(), theta, 10, 13, 1e-6);
  InverseLoss ploss(prob, uplan, kplan, ua, ka, obs, LossSpec{LossKind::Preconditioned, DualNorm::Unorm},
                    false);
  ploss.set_alpha(0.004);
  check_gradient(ploss.objective(), theta, 6, 14, 1e-6);

  // pde-only stage
  loss.set_terms(2);
  check_gradient(loss.objective(), theta, 6, 15, 1e-6);
  loss.set_terms(0);
}

TEST_CASE("inverse loss in boundary-observation mode") {
  const auto& mc = manufactured_case("inverse-jump-kappa");
  auto mesh = build_cartesian(3, 3, {0, 0, 1, 1});
  auto trial = build_space(mesh, nedelec_quad(1));
  auto test = linearized_test_space(trial);
  auto cg = build_space(mesh, lagrange_quad(1, Continuity::CG));
  MaxwellProblem prob{trial, test, Coefficient::fe(cg, VecX::Zero(cg->ndofs)), mc.f, {}, 0};
  InterpolationPlan uplan = interpolation_plan(*trial);
  InterpolationPlan kplan = interpolation_plan(*cg);
  MLPArch ua = make_arch(2, 2, 10, 2, Activation::Tanh);
  MLPArch ka = make_arch(2, 2, 8, 1, Activation::Softplus, true);

  std::vector<Vec3> locs;
  for (int i = 0; i < 8; ++i) {
    const double t = 0.005 + 0.99 * i / 7.0;
    locs.emplace_back(t, 0.005, 0.0);
    locs.emplace_back(t, 0.995, 0.0);
    locs.emplace_back(0.005, t, 0.0);
    locs.emplace_back(0.995, t, 0.0);
  }
  ObservationSet obs = make_observations(mc.u, locs, {0, 1}, 0.0, 1);
  InverseLoss loss(prob, uplan, kplan, ua, ka, obs,
                   LossSpec{LossKind::Preconditioned, DualNorm::Unorm}, true);
  loss.set_alpha(0.003);
  VecX theta(param_count(ua) + param_count(ka));
  theta.head(param_count(ua)) = glorot_init(ua, 15);
  theta.tail(param_count(ka)) = glorot_init(ka, 16);
  check_gradient(loss.objective(), theta, 8, 17, 1e-6);
}

TEST_CASE("noisy observation generation") {
  Field state{2, [](const Vec3& x, double* o) {
                o[0] = 1.0 + x.x();
                o[1] = 2.0 - x.y();
              }};
  std::vector<Vec3> locs = {{0.2, 0.3, 0}, {0.7, 0.6, 0}};
  ObservationSet clean = make_observations(state, locs, {0, 1}, 0.0, 7);
  CHECK(clean.values[0] == doctest::Approx(1.2));
  CHECK(clean.values[3] == doctest::Approx(1.4));
  ObservationSet noisy1 = make_observations(state, locs, {0, 1}, 0.05, 7);
  ObservationSet noisy2 = make_observations(state, locs, {0, 1}, 0.05, 7);
  CHECK((noisy1.values - noisy2.values).norm() == 0.0);  // seeded determinism
  CHECK((noisy1.values - clean.values).norm() > 0.0);
  // multiplicative structure: relative perturbation within a few sigma
  for (int i = 0; i < clean.values.size(); ++i)
    CHECK(std::abs(noisy1.values[i] / clean.values[i] - 1.0) < 0.3);
}
