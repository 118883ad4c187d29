#include <cmath>
#include <iostream>
#include <random>

#include "doctest.h"
#include "feinn/assembly.hpp"
#include "feinn/manufactured.hpp"
#include "feinn/quadrature.hpp"

using namespace feinn;

namespace {

struct Setup {
  SpacePtr full, trial, test;
  VecX offset;
  MaxwellProblem prob;
};

Setup maxwell_setup(const ManufacturedCase& mc, MeshPtr mesh, int order) {
  Setup s;
  s.full = build_space(mesh, nedelec_quad(order));
  s.trial = zero_trace_subspace(s.full);
  s.test = linearized_test_space(s.trial);
  s.offset = dirichlet_offset(*s.full, mc.u);
  s.prob = MaxwellProblem{s.trial, s.test, Coefficient::function(mc.kappa), mc.f, s.offset, 0};
  return s;
}

// Independent dense assembly: loops test cells, locates the containing trial
// cell through the mesh search, sums naively into full-size dense matrices.
struct DenseSystem {
  MatX A;  // test.ndofs x trial.ndofs
  VecX b;  // l(test basis)
};

DenseSystem dense_assemble(const FESpace& trial, const FESpace& test, const Field& kappa,
                           const Field& f, int quad_n) {
  DenseSystem ds;
  ds.A = MatX::Zero(test.ndofs, trial.ndofs);
  ds.b = VecX::Zero(test.ndofs);
  QuadRule q = tensor_rule(quad_n);
  MatX shT, sht;
  VecX cuT, cut;
  for (int ct = 0; ct < test.mesh->num_cells(); ++ct) {
    for (size_t m = 0; m < q.points.size(); ++m) {
      CellGeometry gt = test.mesh->cell_geometry(ct, q.points[m]);
      int tc;
      Vec2 xT;
      trial.mesh->locate(gt.x, tc, xT);
      CellGeometry gT = trial.mesh->cell_geometry(tc, xT);
      trial.elem->shape_values(xT, shT);
      trial.elem->shape_curls(xT, cuT);
      test.elem->shape_values(q.points[m], sht);
      test.elem->shape_curls(q.points[m], cut);
      Mat2 JTiT = gT.J.topLeftCorner<2, 2>().inverse().transpose();
      Mat2 JtiT = gt.J.topLeftCorner<2, 2>().inverse().transpose();
      const double w = q.weights[m] * gt.detJ;
      const double kap = kappa.scalar(gt.x);
      double fv[2];
      f.eval(gt.x, fv);
      for (int j = 0; j < test.elem->ndofs; ++j) {
        const auto [gj, sj] = test.cell_dofs[ct][j];
        Vec2 vj = JtiT * sht.row(j).transpose();
        double cj = cut[j] / gt.detJ;
        ds.b[gj] += sj * w * (vj.x() * fv[0] + vj.y() * fv[1]);
        for (int i = 0; i < trial.elem->ndofs; ++i) {
          const auto [gi, si] = trial.cell_dofs[tc][i];
          Vec2 vi = JTiT * shT.row(i).transpose();
          double ci = cuT[i] / gT.detJ;
          ds.A(gj, gi) += sj * si * w * (cj * ci + kap * vj.dot(vi));
        }
      }
    }
  }
  return ds;
}

// Reduce a dense full system to free dofs with the offset moved to the rhs.
AssembledSystem reduce(const DenseSystem& ds, const FESpace& trial, const FESpace& test,
                       const VecX& offset) {
  MatX Af(test.nfree, trial.nfree);
  VecX bf(test.nfree);
  for (int r = 0; r < test.nfree; ++r) {
    const int gr = test.free_dofs[r];
    double acc = ds.b[gr];
    if (offset.size()) acc -= ds.A.row(gr).dot(offset);
    bf[r] = acc;
    for (int c = 0; c < trial.nfree; ++c) Af(r, c) = ds.A(gr, trial.free_dofs[c]);
  }
  AssembledSystem out;
  out.A = Af.sparseView();
  out.b = bf;
  return out;
}

double max_rel_diff(const MatX& a, const MatX& b) {
  double scale = std::max(1e-30, std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()));
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

TEST_CASE("constant solution is reproduced exactly") {
  auto mesh = build_cartesian(4, 4, {0, 0, 1, 1});
  Field uc{2, [](const Vec3&, double* out) {
             out[0] = 1.0;
             out[1] = 0.0;
           }};
  ManufacturedCase mc;
  mc.u = uc;
  mc.kappa = constant_scalar(1.0);
  mc.f = uc;  // curl curl u = 0, kappa u = u
  Setup s = maxwell_setup(mc, mesh, 1);
  auto sys = assemble_maxwell(s.prob);
  VecX u_free = solve_sparse(sys.A, sys.b);
  VecX full = s.trial->extend_free(u_free) + s.offset;
  std::vector<Vec3> pts = {{0.21, 0.37, 0}, {0.77, 0.12, 0}, {0.5, 0.93, 0}};
  MatX vals;
  eval_fe_function(*s.full, full, pts, vals);
  for (int i = 0; i < vals.rows(); ++i) {
    CHECK(std::abs(vals(i, 0) - 1.0) < 1e-10);
    CHECK(std::abs(vals(i, 1)) < 1e-10);
  }
}

TEST_CASE("assembly matches the dense oracle") {
  const auto& mc = manufactured_case("maxwell-smooth");
  for (auto [n, k] : {std::pair{2, 1}, {2, 2}, {3, 2}}) {
    auto mesh = build_cartesian(n, n, {0, 0, 1, 1});
    Setup s = maxwell_setup(mc, mesh, k);
    auto sys = assemble_maxwell(s.prob);
    DenseSystem ds = dense_assemble(*s.trial, *s.test, mc.kappa, mc.f, s.prob.quad_points());
    AssembledSystem ref = reduce(ds, *s.trial, *s.test, s.offset);
    CHECK(max_rel_diff(MatX(sys.A), MatX(ref.A)) < 1e-12);
    CHECK((sys.b - ref.b).lpNorm<Eigen::Infinity>() /
              std::max(1.0, ref.b.lpNorm<Eigen::Infinity>()) <
          1e-12);

    // residual paths agree with the oracle and each other
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VecX x(s.trial->nfree);
    for (int i = 0; i < x.size(); ++i) x[i] = u(rng);
    VecX r1 = residual_vector(sys, x);
    VecX r2 = residual_vector_matfree(s.prob, x);
    VecX r3 = residual_vector(ref, x);
    CHECK((r1 - r3).lpNorm<Eigen::Infinity>() < 1e-11);
    CHECK((r1 - r2).lpNorm<Eigen::Infinity>() < 1e-11);

    // residual at zero is -b, residual at the solution vanishes
    CHECK((residual_vector(sys, VecX::Zero(s.trial->nfree)) + sys.b).norm() == 0.0);
    VecX sol = solve_sparse(sys.A, sys.b);
    CHECK(residual_vector(sys, sol).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("fem convergence at first order on the smooth case") {
  const auto& mc = manufactured_case("maxwell-smooth");
  std::vector<double> errs;
  for (int n : {8, 16, 32}) {
    Setup s = maxwell_setup(mc, build_cartesian(n, n, {0, 0, 1, 1}), 1);
    auto sys = assemble_maxwell(s.prob);
    VecX full = s.trial->extend_free(solve_sparse(sys.A, sys.b)) + s.offset;
    errs.push_back(fe_error_norms(*s.full, full, mc.u, &mc.deriv, 5).l2);
  }
  CHECK(errs[0] / errs[1] == doctest::Approx(2.0).epsilon(0.2));
  CHECK(errs[1] / errs[2] == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("petrov-galerkin systems for k=2,3 are invertible; condition recorded") {
  const auto& mc = manufactured_case("maxwell-smooth");
  for (int k : {2, 3}) {
    Setup s = maxwell_setup(mc, build_cartesian(4, 4, {0, 0, 1, 1}), k);
    auto sys = assemble_maxwell(s.prob);
    MatX Ad(sys.A);
    Eigen::JacobiSVD<MatX> svd(Ad);
    const double cond = svd.singularValues()(0) / svd.singularValues().tail(1)(0);
    CHECK(std::isfinite(cond));
    CHECK(svd.singularValues().tail(1)(0) > 0.0);
    std::cout << "[info] linearised Petrov-Galerkin k=" << k << " cond(A) = " << cond << "\n";
    // solvable
    VecX sol = solve_sparse(sys.A, sys.b);
    CHECK(residual_vector(sys, sol).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("gram matrices") {
  auto mesh = build_cartesian(3, 3, {0, 0, 2, 1});
  // partition of measure for the DG_0 L2 gram
  auto dg = build_space(mesh, lagrange_quad(0, Continuity::DG));
  SpMat M = gram_matrix(*dg, InnerProduct::L2);
  VecX ones = VecX::Ones(dg->ndofs);
  CHECK(ones.dot(M * ones) == doctest::Approx(2.0).epsilon(1e-12));

  // SPD and exact H(curl) norms
  auto nd0 = zero_trace_subspace(build_space(mesh, nedelec_quad(2)));
  SpMat B = gram_matrix(*nd0, InnerProduct::Hcurl);
  SpMatC Bc(B);
  Eigen::SimplicialLLT<SpMatC> llt(Bc);
  CHECK(llt.info() == Eigen::Success);
  CHECK(MatX(B).diagonal().minCoeff() > 0.0);

  auto ndfull = build_space(mesh, nedelec_quad(2));
  SpMat Bf = gram_matrix(*ndfull, InnerProduct::Hcurl);
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Field zero2{2, [](const Vec3&, double* o) { o[0] = o[1] = 0.0; }};
  Field zero1{1, [](const Vec3&, double* o) { o[0] = 0.0; }};
  for (int t = 0; t < 10; ++t) {
    VecX x(ndfull->ndofs);
    for (int i = 0; i < x.size(); ++i) x[i] = u(rng);
    ErrorNorms nrm = fe_error_norms(*ndfull, x, zero2, &zero1, 6);
    const double direct = nrm.l2 * nrm.l2 + nrm.dseminorm * nrm.dseminorm;
    CHECK(std::abs(x.dot(Bf * x) - direct) / direct < 1e-10);
  }

  // Hdiv on surface RT
  auto rt = build_space(build_cubed_sphere(2), raviart_thomas_quad(1));
  SpMat Bs = gram_matrix(*rt, InnerProduct::Hdiv);
  SpMatC Bsc(Bs);
  Eigen::SimplicialLLT<SpMatC> llts(Bsc);
  CHECK(llts.info() == Eigen::Success);
  CHECK_THROWS(gram_matrix(*rt, InnerProduct::Hcurl));
}

TEST_CASE("solve_sparse basics") {
  // identity
  SpMat I(5, 5);
  I.setIdentity();
  VecX b(5);
  b << 1, -2, 3, 0.5, -0.1;
  CHECK((solve_sparse(I, b) - b).norm() == 0.0);

  // random SPD vs dense oracle
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MatX R(50, 50);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) R(i, j) = u(rng);
  MatX S = R * R.transpose() + 50.0 * MatX::Identity(50, 50);
  VecX rhs(50);
  for (int i = 0; i < 50; ++i) rhs[i] = u(rng);
  VecX dense = S.ldlt().solve(rhs);
  SpMat Ssp = S.sparseView();
  CHECK((solve_sparse(Ssp, rhs, true) - dense).norm() / dense.norm() < 1e-10);
  CHECK((solve_sparse(Ssp, rhs, false) - dense).norm() / dense.norm() < 1e-10);

  // structural singularity is reported
  SpMat Z(3, 3);
  std::vector<Eigen::Triplet<double>> t{{0, 0, 1.0}, {1, 1, 1.0}};
  Z.setFromTriplets(t.begin(), t.end());
  CHECK_THROWS(solve_sparse(Z, VecX::Ones(3)));
}

TEST_CASE("basis invariance: rescaled dof functionals give the same fem solution") {
  const auto& mc = manufactured_case("maxwell-smooth");
  auto mesh = build_cartesian(4, 4, {0, 0, 1, 1});
  auto solve_with = [&](ElementPtr elem) {
    auto full = build_space(mesh, elem);
    auto trial = zero_trace_subspace(full);
    auto test = linearized_test_space(trial);
    VecX offset = dirichlet_offset(*full, mc.u);
    MaxwellProblem prob{trial, test, Coefficient::function(mc.kappa), mc.f, offset, 0};
    auto sys = assemble_maxwell(prob);
    VecX full_dofs = trial->extend_free(solve_sparse(sys.A, sys.b)) + offset;
    return std::pair{full, full_dofs};
  };
  auto [sp1, d1] = solve_with(nedelec_quad(2));
  auto [sp2, d2] = solve_with(with_scaled_dofs(*nedelec_quad(2), 2.0));
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> up(0.02, 0.98);
  std::vector<Vec3> pts;
  for (int i = 0; i < 50; ++i) pts.emplace_back(up(rng), up(rng), 0.0);
  MatX v1, v2;
  eval_fe_function(*sp1, d1, pts, v1);
  eval_fe_function(*sp2, d2, pts, v2);
  CHECK((v1 - v2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("boundary-modified residual") {
  const auto& mc = manufactured_case("inverse-jump-kappa");
  auto mesh = build_cartesian(2, 2, {0, 0, 1, 1});
  auto trial = build_space(mesh, nedelec_quad(1));
  auto test = linearized_test_space(trial);
  MaxwellProblem prob{trial, test, Coefficient::function(mc.kappa), mc.f, {}, 0};
  auto sys = assemble_maxwell(prob);
  SpMat Bd = assemble_boundary_curl_matrix(prob);

  // test dofs away from the boundary have empty boundary rows
  MatX Bdd(Bd);
  for (int e = 0; e < mesh->num_edges(); ++e)
    if (!mesh->edge_boundary[e]) CHECK(Bdd.row(e).cwiseAbs().maxCoeff() == 0.0);

  // dense oracle including the boundary loop
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecX x(trial->ndofs);
  for (int i = 0; i < x.size(); ++i) x[i] = u(rng);
  VecX r = modified_residual_boundary_obs(prob, sys, Bd, x);

  DenseSystem ds = dense_assemble(*trial, *test, mc.kappa, mc.f, prob.quad_points());
  // dense boundary term: loop boundary edges of the test mesh
  MatX Bdense = MatX::Zero(test->ndofs, trial->ndofs);
  const GaussRule& g1 = gauss_legendre(prob.quad_points());
  for (int ct = 0; ct < test->mesh->num_cells(); ++ct)
    for (int le = 0; le < 4; ++le) {
      const EdgeUse& eu = test->mesh->cell_edges[ct][le];
      if (!test->mesh->edge_boundary[eu.edge]) continue;
      Vec2 n = le == 0 ? Vec2(0, -1) : le == 1 ? Vec2(1, 0) : le == 2 ? Vec2(0, 1) : Vec2(-1, 0);
      for (size_t m = 0; m < g1.points.size(); ++m) {
        double s = g1.points[m];
        Vec2 xt = le == 0 ? Vec2(s, -1) : le == 1 ? Vec2(1, s) : le == 2 ? Vec2(s, 1) : Vec2(-1, s);
        CellGeometry gt = test->mesh->cell_geometry(ct, xt);
        double ds_len = (le == 0 || le == 2) ? gt.J(0, 0) : gt.J(1, 1);
        int tc;
        Vec2 xT;
        trial->mesh->locate(gt.x, tc, xT);
        CellGeometry gT = trial->mesh->cell_geometry(tc, xT);
        MatX sht;
        VecX cuT;
        test->elem->shape_values(xt, sht);
        trial->elem->shape_curls(xT, cuT);
        Mat2 JtiT = gt.J.topLeftCorner<2, 2>().inverse().transpose();
        for (int j = 0; j < test->elem->ndofs; ++j) {
          const auto [gj, sj] = test->cell_dofs[ct][j];
          Vec2 psi = JtiT * sht.row(j).transpose();
          double cross = psi.y() * n.x() - psi.x() * n.y();
          for (int i = 0; i < trial->elem->ndofs; ++i) {
            const auto [gi, si] = trial->cell_dofs[tc][i];
            Bdense(gj, gi) += g1.weights[m] * ds_len * cross * sj * si * cuT[i] / gT.detJ;
          }
        }
      }
    }
  VecX r_ref = ds.A * x - ds.b - Bdense * x;
  CHECK((r - r_ref).lpNorm<Eigen::Infinity>() /
            std::max(1.0, r_ref.lpNorm<Eigen::Infinity>()) <
        1e-12);
}

TEST_CASE("modified residual consistency under refinement") {
  const auto& mc = manufactured_case("inverse-jump-kappa");
  std::vector<double> rnorm;
  for (int n : {8, 16, 32}) {
    auto mesh = build_cartesian(n, n, {0, 0, 1, 1});
    auto trial = build_space(mesh, nedelec_quad(1));
    auto test = linearized_test_space(trial);
    MaxwellProblem prob{trial, test, Coefficient::function(mc.kappa), mc.f, {}, 0};
    auto sys = assemble_maxwell(prob);
    SpMat Bd = assemble_boundary_curl_matrix(prob);
    VecX u_int = interpolate(*trial, mc.u);
    rnorm.push_back(
        modified_residual_boundary_obs(prob, sys, Bd, u_int).lpNorm<Eigen::Infinity>());
  }
  CHECK(rnorm[1] < rnorm[0]);
  CHECK(rnorm[2] < rnorm[1]);
}

TEST_CASE("darcy on the sphere") {
  const auto& mc = manufactured_case("darcy-sphere");
  // zero source -> zero solution
  {
    auto mesh = build_cubed_sphere(4);
    auto rt = build_space(mesh, raviart_thomas_quad(1));
    auto dg = build_space(mesh, lagrange_quad(0, Continuity::DG));
    DarcySphereProblem prob{rt, dg, Field{1, [](const Vec3&, double* o) { o[0] = 0.0; }}, 0};
    auto sys = assemble_darcy_sphere(prob);
    CHECK(sys.A.rows() == rt->ndofs + dg->ndofs + 1);
    VecX x = solve_sparse(sys.A, sys.b);
    CHECK(x.norm() < 1e-12);
  }
  // manufactured solution converges at first order; pressure mean vanishes
  std::vector<double> flux_err;
  for (int ne : {4, 8}) {
    auto mesh = build_cubed_sphere(ne);
    auto rt = build_space(mesh, raviart_thomas_quad(1));
    auto dg = build_space(mesh, lagrange_quad(0, Continuity::DG));
    DarcySphereProblem prob{rt, dg, mc.f, 0};
    auto sys = assemble_darcy_sphere(prob);
    VecX x = solve_sparse(sys.A, sys.b);
    VecX u = x.head(sys.nu);
    VecX p = x.segment(sys.nu, sys.np);
    flux_err.push_back(fe_error_norms(*rt, u, mc.u, &mc.deriv, 5).l2);
    // weighted pressure mean
    double mean = 0.0;
    QuadRule q = tensor_rule(4);
    for (int c = 0; c < mesh->num_cells(); ++c) {
      double area = 0.0;
      for (size_t i = 0; i < q.points.size(); ++i)
        area += q.weights[i] * mesh->cell_geometry(c, q.points[i]).sqrt_detG;
      mean += area * p[c];
    }
    CHECK(std::abs(mean) < 1e-10);
    CHECK(residual_vector_darcy(sys, x).lpNorm<Eigen::Infinity>() < 1e-9);
  }
  CHECK(flux_err[0] / flux_err[1] == doctest::Approx(2.0).epsilon(0.35));
}

TEST_CASE("non-positive coefficient samples are rejected") {
  const auto& mc = manufactured_case("maxwell-smooth");
  auto mesh = build_cartesian(2, 2, {0, 0, 1, 1});
  Setup s = maxwell_setup(mc, mesh, 1);
  s.prob.kappa = Coefficient::function(scalar_field([](const Vec3& p) { return p.x() - 0.5; }));
  CHECK_THROWS(assemble_maxwell(s.prob));
}

TEST_CASE("manufactured cases satisfy their strong forms") {
  for (const char* id : {"maxwell-smooth", "maxwell-wavefront", "inverse-gaussian-kappa",
                         "inverse-rational-kappa", "inverse-jump-kappa", "darcy-sphere"})
    CHECK_NOTHROW(verify_case(manufactured_case(id), 10, 1234, 1e-5));
}
