#include "feinn/assembly.hpp"

#include <cmath>

#include "feinn/quadrature.hpp"

namespace feinn {

namespace {

Vec2 local_edge_point(int e, double s) {
  switch (e) {
    case 0: return Vec2(s, -1.0);
    case 1: return Vec2(1.0, s);
    case 2: return Vec2(s, 1.0);
    default: return Vec2(-1.0, s);
  }
}

Vec2 outward_normal(int e) {
  switch (e) {
    case 0: return Vec2(0, -1);
    case 1: return Vec2(1, 0);
    case 2: return Vec2(0, 1);
    default: return Vec2(-1, 0);
  }
}

// Precomputed Petrov-Galerkin data: test-cell quadrature, trial/test shape
// tables in the physical frame, constant Jacobian factors of the uniform grid.
struct PGData {
  int r = 1;  // test cells per trial cell and axis
  QuadRule quad;
  double detJT = 0.0, detJt = 0.0;
  std::vector<std::vector<MatX>> trial_vals;   // [sub][qp] ndT x 2, physical frame
  std::vector<std::vector<VecX>> trial_curls;  // [sub][qp] ndT, physical curl
  std::vector<MatX> test_vals;                 // [qp] ndt x 2
  std::vector<VecX> test_curls;                // [qp]
  std::vector<std::vector<VecX>> kappa_vals;   // [sub][qp] coefficient shapes (if FE)
  std::vector<Vec2> sub_origin;                // trial ref coords of subcell corners

  Vec2 trial_ref(int sub, const Vec2& xt) const {
    return Vec2(sub_origin[sub].x() + (xt.x() + 1.0) / r,
                sub_origin[sub].y() + (xt.y() + 1.0) / r);
  }
};

PGData prepare_pg(const MaxwellProblem& prob) {
  const FESpace& trial = *prob.trial;
  const FESpace& test = *prob.test;
  require(!trial.surface(), "assemble_maxwell: flat meshes only");
  require(trial.mesh->bounds.x0 == test.mesh->bounds.x0 &&
              trial.mesh->bounds.x1 == test.mesh->bounds.x1,
          "assemble_maxwell: trial and test meshes cover different domains");
  require(test.mesh->nx % trial.mesh->nx == 0 && test.mesh->ny % trial.mesh->ny == 0,
          "assemble_maxwell: test mesh is not a refinement of the trial mesh");
  PGData d;
  d.r = test.mesh->nx / trial.mesh->nx;
  require(test.mesh->ny / trial.mesh->ny == d.r, "assemble_maxwell: anisotropic refinement");
  d.quad = tensor_rule(prob.quad_points());

  CellGeometry gT = trial.mesh->cell_geometry(0, Vec2(0, 0));
  CellGeometry gt = test.mesh->cell_geometry(0, Vec2(0, 0));
  d.detJT = gT.detJ;
  d.detJt = gt.detJ;
  const Mat2 JT_invT = gT.J.topLeftCorner<2, 2>().inverse().transpose();
  const Mat2 Jt_invT = gt.J.topLeftCorner<2, 2>().inverse().transpose();
  const Mat2 JT2 = gT.J.topLeftCorner<2, 2>();
  const Mat2 Jt2 = gt.J.topLeftCorner<2, 2>();

  auto piola_vals = [](const ShapeTable& tab, Family fam, const Mat2& JinvT, const Mat2& J,
                       double detJ, std::vector<MatX>& vals, std::vector<VecX>& curls) {
    vals.resize(tab.points.size());
    curls.resize(tab.points.size());
    for (size_t q = 0; q < tab.points.size(); ++q) {
      if (fam == Family::Nedelec)
        vals[q] = tab.values[q] * JinvT.transpose();  // rows: J^{-T} uhat
      else
        vals[q] = tab.values[q] * (J.transpose() / detJ);
      curls[q] = tab.curls_or_divs[q] / detJ;
    }
  };

  ShapeTable test_tab = shape_table(*test.elem, d.quad.points);
  piola_vals(test_tab, test.elem->family, Jt_invT, Jt2, d.detJt, d.test_vals, d.test_curls);

  d.trial_vals.resize(d.r * d.r);
  d.trial_curls.resize(d.r * d.r);
  d.kappa_vals.resize(d.r * d.r);
  d.sub_origin.resize(d.r * d.r);
  for (int b = 0; b < d.r; ++b)
    for (int a = 0; a < d.r; ++a) {
      const int sub = b * d.r + a;
      d.sub_origin[sub] = Vec2(-1.0 + 2.0 * a / d.r, -1.0 + 2.0 * b / d.r);
      std::vector<Vec2> pts(d.quad.points.size());
      for (size_t q = 0; q < pts.size(); ++q) pts[q] = d.trial_ref(sub, d.quad.points[q]);
      ShapeTable tab = shape_table(*trial.elem, pts);
      piola_vals(tab, trial.elem->family, JT_invT, JT2, d.detJT, d.trial_vals[sub],
                 d.trial_curls[sub]);
      if (prob.kappa.is_fe()) {
        require(prob.kappa.fe_space->mesh.get() == trial.mesh.get(),
                "assemble_maxwell: coefficient space must live on the trial mesh");
        ShapeTable ktab = shape_table(*prob.kappa.fe_space->elem, pts);
        d.kappa_vals[sub].resize(pts.size());
        for (size_t q = 0; q < pts.size(); ++q) d.kappa_vals[sub][q] = ktab.values[q].col(0);
      }
    }
  return d;
}

double kappa_at(const MaxwellProblem& prob, const PGData& d, int sub, size_t qp,
                const VecX* kappa_local, const Vec3& x) {
  double kap;
  if (prob.kappa.is_fe())
    kap = d.kappa_vals[sub][qp].dot(*kappa_local);
  else
    kap = prob.kappa.analytic.scalar(x);
  require(kap > 0.0, "assemble_maxwell: non-positive coefficient sample");
  return kap;
}

}  // namespace

AssembledSystem assemble_maxwell(const MaxwellProblem& prob) {
  const FESpace& trial = *prob.trial;
  const FESpace& test = *prob.test;
  PGData d = prepare_pg(prob);
  const int ndT = trial.elem->ndofs, ndt = test.elem->ndofs;
  const bool has_offset = prob.offset.size() > 0;
  if (has_offset)
    require(prob.offset.size() == trial.ndofs, "assemble_maxwell: offset size mismatch");

  std::vector<Eigen::Triplet<double>> trips;
  VecX b = VecX::Zero(test.nfree);
  MatX Mloc(ndt, ndT);
  VecX bloc(ndt), fv(2);
  const int nxT = trial.mesh->nx, nxt = test.mesh->nx;

  for (int tc = 0; tc < trial.mesh->num_cells(); ++tc) {
    const int ci = tc % nxT, cj = tc / nxT;
    VecX kappa_local;
    if (prob.kappa.is_fe()) kappa_local = prob.kappa.fe_space->local_coeffs(tc, prob.kappa.fe_dofs);
    for (int bo = 0; bo < d.r; ++bo)
      for (int ao = 0; ao < d.r; ++ao) {
        const int sub = bo * d.r + ao;
        const int ct = (cj * d.r + bo) * nxt + (ci * d.r + ao);
        Mloc.setZero();
        bloc.setZero();
        for (size_t q = 0; q < d.quad.points.size(); ++q) {
          const CellGeometry g = test.mesh->cell_geometry(ct, d.quad.points[q]);
          const double w = d.quad.weights[q] * d.detJt;
          const double kap = kappa_at(prob, d, sub, q, &kappa_local, g.x);
          Mloc.noalias() += w * d.test_curls[q] * d.trial_curls[sub][q].transpose();
          Mloc.noalias() += (w * kap) * d.test_vals[q] * d.trial_vals[sub][q].transpose();
          prob.f.eval(g.x, fv.data());
          bloc.noalias() += w * d.test_vals[q] * fv;
        }
        const auto& tdofs = test.cell_dofs[ct];
        const auto& Tdofs = trial.cell_dofs[tc];
        for (int jt = 0; jt < ndt; ++jt) {
          const int gj = tdofs[jt].first;
          const int row = test.free_index[gj];
          if (row < 0) continue;
          const double sj = tdofs[jt].second;
          b[row] += sj * bloc[jt];
          for (int iT = 0; iT < ndT; ++iT) {
            const int gi = Tdofs[iT].first;
            const double val = sj * Tdofs[iT].second * Mloc(jt, iT);
            const int col = trial.free_index[gi];
            if (col >= 0)
              trips.emplace_back(row, col, val);
            else if (has_offset && prob.offset[gi] != 0.0)
              b[row] -= val * prob.offset[gi];
          }
        }
      }
  }
  AssembledSystem sys;
  sys.A.resize(test.nfree, trial.nfree);
  sys.A.setFromTriplets(trips.begin(), trips.end());
  sys.b = std::move(b);
  return sys;
}

VecX residual_vector(const AssembledSystem& sys, const VecX& u_free) {
  require(u_free.size() == sys.A.cols(), "residual_vector: dimension mismatch");
  return sys.A * u_free - sys.b;
}

VecX residual_vector_matfree(const MaxwellProblem& prob, const VecX& u_free) {
  const FESpace& trial = *prob.trial;
  const FESpace& test = *prob.test;
  require(u_free.size() == trial.nfree, "residual_vector_matfree: dimension mismatch");
  PGData d = prepare_pg(prob);
  VecX u_full = trial.extend_free(u_free);
  if (prob.offset.size() > 0) u_full += prob.offset;

  VecX r = VecX::Zero(test.nfree);
  const int ndt = test.elem->ndofs;
  VecX rloc(ndt), fv(2);
  const int nxT = trial.mesh->nx, nxt = test.mesh->nx;
  for (int tc = 0; tc < trial.mesh->num_cells(); ++tc) {
    const int ci = tc % nxT, cj = tc / nxT;
    VecX uloc = trial.local_coeffs(tc, u_full);
    VecX kappa_local;
    if (prob.kappa.is_fe()) kappa_local = prob.kappa.fe_space->local_coeffs(tc, prob.kappa.fe_dofs);
    for (int bo = 0; bo < d.r; ++bo)
      for (int ao = 0; ao < d.r; ++ao) {
        const int sub = bo * d.r + ao;
        const int ct = (cj * d.r + bo) * nxt + (ci * d.r + ao);
        rloc.setZero();
        for (size_t q = 0; q < d.quad.points.size(); ++q) {
          const CellGeometry g = test.mesh->cell_geometry(ct, d.quad.points[q]);
          const double w = d.quad.weights[q] * d.detJt;
          const double kap = kappa_at(prob, d, sub, q, &kappa_local, g.x);
          const Vec2 u_phys = d.trial_vals[sub][q].transpose() * uloc;
          const double curl_u = d.trial_curls[sub][q].dot(uloc);
          prob.f.eval(g.x, fv.data());
          rloc.noalias() += (w * curl_u) * d.test_curls[q];
          rloc.noalias() += w * d.test_vals[q] * (kap * u_phys - Vec2(fv[0], fv[1]));
        }
        const auto& tdofs = test.cell_dofs[ct];
        for (int jt = 0; jt < ndt; ++jt) {
          const int row = test.free_index[tdofs[jt].first];
          if (row >= 0) r[row] += tdofs[jt].second * rloc[jt];
        }
      }
  }
  return r;
}

SpMat assemble_boundary_curl_matrix(const MaxwellProblem& prob) {
  const FESpace& trial = *prob.trial;
  const FESpace& test = *prob.test;
  require(!trial.surface(), "boundary matrix: flat meshes only");
  const int r = test.mesh->nx / trial.mesh->nx;
  const int nxT = trial.mesh->nx, nxt = test.mesh->nx;
  const GaussRule& g1 = gauss_legendre(prob.quad_points());
  CellGeometry gT = trial.mesh->cell_geometry(0, Vec2(0, 0));
  CellGeometry gt = test.mesh->cell_geometry(0, Vec2(0, 0));
  const Mat2 Jt_invT = gt.J.topLeftCorner<2, 2>().inverse().transpose();

  std::vector<Eigen::Triplet<double>> trips;
  MatX test_shapes;
  VecX trial_curls;
  for (int ct = 0; ct < test.mesh->num_cells(); ++ct) {
    const int ti = ct % nxt, tj = ct / nxt;
    const int tc = (tj / r) * nxT + (ti / r);
    const int ao = ti % r, bo = tj % r;
    for (int le = 0; le < 4; ++le) {
      const EdgeUse& eu = test.mesh->cell_edges[ct][le];
      if (!test.mesh->edge_boundary[eu.edge]) continue;
      const Vec2 n = outward_normal(le);
      const double ds = (le == 0 || le == 2) ? gt.J(0, 0) : gt.J(1, 1);  // |J that| on the edge
      for (size_t m = 0; m < g1.points.size(); ++m) {
        const Vec2 xt = local_edge_point(le, g1.points[m]);
        test.elem->shape_values(xt, test_shapes);
        const Vec2 xT(-1.0 + (2.0 * ao + 1.0 + xt.x()) / r, -1.0 + (2.0 * bo + 1.0 + xt.y()) / r);
        trial.elem->shape_curls(xT, trial_curls);
        const double w = g1.weights[m] * ds;
        const auto& tdofs = test.cell_dofs[ct];
        const auto& Tdofs = trial.cell_dofs[tc];
        for (int jt = 0; jt < test.elem->ndofs; ++jt) {
          const int row = test.free_index[tdofs[jt].first];
          if (row < 0) continue;
          const Vec2 psi = Jt_invT * test_shapes.row(jt).transpose();
          const double cross = psi.y() * n.x() - psi.x() * n.y();
          if (cross == 0.0) continue;
          for (int iT = 0; iT < trial.elem->ndofs; ++iT) {
            const int col = trial.free_index[Tdofs[iT].first];
            if (col < 0) continue;
            const double val =
                w * cross * (trial_curls[iT] / gT.detJ) * tdofs[jt].second * Tdofs[iT].second;
            if (val != 0.0) trips.emplace_back(row, col, val);
          }
        }
      }
    }
  }
  SpMat B(test.nfree, trial.nfree);
  B.setFromTriplets(trips.begin(), trips.end());
  return B;
}

VecX modified_residual_boundary_obs(const MaxwellProblem& prob, const AssembledSystem& sys,
                                    const SpMat& boundary_matrix, const VecX& u_full) {
  require(!prob.trial->zero_trace && !prob.test->zero_trace,
          "modified residual: full (unconstrained) spaces required");
  require(u_full.size() == prob.trial->ndofs, "modified residual: dof size mismatch");
  return sys.A * u_full - sys.b - boundary_matrix * u_full;
}

SpMat gram_matrix(const FESpace& space, InnerProduct inner, int quad_n) {
  const ElementDef& el = *space.elem;
  switch (inner) {
    case InnerProduct::Hcurl:
      require(el.family == Family::Nedelec, "gram_matrix: Hcurl needs a Nedelec space");
      break;
    case InnerProduct::Hdiv:
      require(el.family == Family::RaviartThomas, "gram_matrix: Hdiv needs a Raviart-Thomas space");
      break;
    case InnerProduct::L2:
      break;
  }
  const int nq = quad_n > 0 ? quad_n : el.order + (space.surface() ? 3 : 2);
  QuadRule quad = tensor_rule(nq);
  ShapeTable tab = shape_table(el, quad.points);
  const bool with_deriv = inner != InnerProduct::L2;
  const int nd = el.ndofs;

  std::vector<Eigen::Triplet<double>> trips;
  MatX Mloc(nd, nd);
  for (int c = 0; c < space.mesh->num_cells(); ++c) {
    Mloc.setZero();
    for (size_t q = 0; q < quad.points.size(); ++q) {
      const CellGeometry g = space.mesh->cell_geometry(c, quad.points[q]);
      const double w = quad.weights[q] * g.detJ;
      if (el.ncomp == 1) {
        Mloc.noalias() += w * tab.values[q].col(0) * tab.values[q].col(0).transpose();
        continue;
      }
      MatX phys;
      if (el.family == Family::Nedelec) {
        const Mat2 JinvT = g.J.topLeftCorner<2, 2>().inverse().transpose();
        phys = tab.values[q] * JinvT.transpose();
        Mloc.noalias() += w * phys * phys.transpose();
      } else {
        // (J u / detJ) . (J v / detJ) = uhat^T G vhat / detJ^2
        Mloc.noalias() += (w / (g.detJ * g.detJ)) * tab.values[q] * g.G * tab.values[q].transpose();
      }
      if (with_deriv)
        Mloc.noalias() +=
            (w / (g.detJ * g.detJ)) * tab.curls_or_divs[q] * tab.curls_or_divs[q].transpose();
    }
    const auto& cd = space.cell_dofs[c];
    for (int i = 0; i < nd; ++i) {
      const int row = space.free_index[cd[i].first];
      if (row < 0) continue;
      for (int j = 0; j < nd; ++j) {
        const int col = space.free_index[cd[j].first];
        if (col < 0) continue;
        trips.emplace_back(row, col, cd[i].second * cd[j].second * Mloc(i, j));
      }
    }
  }
  SpMat M(space.nfree, space.nfree);
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

VecX solve_sparse(const SpMat& A, const VecX& b, bool spd) {
  require(A.rows() == A.cols(), "solve_sparse: matrix must be square");
  require(b.size() == A.rows(), "solve_sparse: right-hand side size mismatch");
  SpMatC Ac(A);
  Ac.makeCompressed();
  VecX x;
  if (spd) {
    Eigen::SimplicialLLT<SpMatC> llt(Ac);
    require(llt.info() == Eigen::Success, "solve_sparse: Cholesky factorisation failed");
    x = llt.solve(b);
  } else {
    Eigen::SparseLU<SpMatC> lu;
    lu.analyzePattern(Ac);
    lu.factorize(Ac);
    require(lu.info() == Eigen::Success,
            "solve_sparse: LU factorisation failed: " + lu.lastErrorMessage());
    x = lu.solve(b);
  }
  const double bn = b.lpNorm<Eigen::Infinity>();
  if (bn > 0.0) {
    const double rel = (A * x - b).lpNorm<Eigen::Infinity>() / bn;
    require(rel < 1e-9, "solve_sparse: residual check failed, rel = " + std::to_string(rel));
  }
  return x;
}

DarcySystem assemble_darcy_sphere(const DarcySphereProblem& prob) {
  const FESpace& U = *prob.flux;
  const FESpace& P = *prob.pressure;
  require(U.surface(), "assemble_darcy_sphere: closed surface mesh required");
  require(U.mesh.get() == P.mesh.get(), "assemble_darcy_sphere: spaces on different meshes");
  const int nu = U.ndofs, np = P.ndofs;
  QuadRule quad = tensor_rule(prob.quad_points());
  ShapeTable tab = shape_table(*U.elem, quad.points);

  std::vector<Eigen::Triplet<double>> trips;
  VecX b = VecX::Zero(nu + np + 1);
  const int ndu = U.elem->ndofs;
  MatX Mloc(ndu, ndu);
  VecX Dloc(ndu);
  for (int c = 0; c < U.mesh->num_cells(); ++c) {
    Mloc.setZero();
    Dloc.setZero();
    double area = 0.0, frhs = 0.0;
    for (size_t q = 0; q < quad.points.size(); ++q) {
      const CellGeometry g = U.mesh->cell_geometry(c, quad.points[q]);
      const double w = quad.weights[q];
      // (u, v) over the surface: uhat^T G vhat / sqrt|G|
      Mloc.noalias() += (w / g.sqrt_detG) * tab.values[q] * g.G * tab.values[q].transpose();
      // (div_S u, q): the area elements cancel
      Dloc.noalias() += w * tab.curls_or_divs[q];
      area += w * g.sqrt_detG;
      frhs += w * g.sqrt_detG * prob.f.scalar(g.x);
    }
    const auto& ud = U.cell_dofs[c];
    for (int i = 0; i < ndu; ++i)
      for (int j = 0; j < ndu; ++j)
        trips.emplace_back(ud[i].first, ud[j].first, ud[i].second * ud[j].second * Mloc(i, j));
    const int prow = nu + c;  // DG_0: one dof per cell
    for (int i = 0; i < ndu; ++i) {
      const double dv = ud[i].second * Dloc[i];
      trips.emplace_back(ud[i].first, prow, -dv);  // -(p, div v)
      trips.emplace_back(prow, ud[i].first, dv);   // (div u, q)
    }
    trips.emplace_back(prow, nu + np, area);   // (lambda, q)
    trips.emplace_back(nu + np, prow, area);   // (p, sigma)
    b[prow] = frhs;
  }
  DarcySystem sys;
  sys.nu = nu;
  sys.np = np;
  sys.A.resize(nu + np + 1, nu + np + 1);
  sys.A.setFromTriplets(trips.begin(), trips.end());
  sys.b = std::move(b);
  return sys;
}

VecX residual_vector_darcy(const DarcySystem& sys, const VecX& x) {
  require(x.size() == sys.A.cols(), "residual_vector_darcy: dimension mismatch");
  return sys.A * x - sys.b;
}

VecX kappa_gradient(const MaxwellProblem& prob, const VecX& state_full_with_offset,
                    const VecX& w_test_free) {
  require(prob.kappa.is_fe(), "kappa_gradient: coefficient must be a FE function");
  const FESpace& trial = *prob.trial;
  const FESpace& test = *prob.test;
  const FESpace& ksp = *prob.kappa.fe_space;
  PGData d = prepare_pg(prob);
  VecX w_full = test.extend_free(w_test_free);
  VecX grad = VecX::Zero(ksp.ndofs);
  const int nxT = trial.mesh->nx, nxt = test.mesh->nx;
  const int ndk = ksp.elem->ndofs;
  VecX gloc(ndk);
  for (int tc = 0; tc < trial.mesh->num_cells(); ++tc) {
    const int ci = tc % nxT, cj = tc / nxT;
    VecX uloc = trial.local_coeffs(tc, state_full_with_offset);
    gloc.setZero();
    for (int bo = 0; bo < d.r; ++bo)
      for (int ao = 0; ao < d.r; ++ao) {
        const int sub = bo * d.r + ao;
        const int ct = (cj * d.r + bo) * nxt + (ci * d.r + ao);
        VecX wloc = test.local_coeffs(ct, w_full);
        for (size_t q = 0; q < d.quad.points.size(); ++q) {
          const double w = d.quad.weights[q] * d.detJt;
          const Vec2 u_phys = d.trial_vals[sub][q].transpose() * uloc;
          const Vec2 w_phys = d.test_vals[q].transpose() * wloc;
          gloc.noalias() += (w * u_phys.dot(w_phys)) * d.kappa_vals[sub][q];
        }
      }
    const auto& kd = ksp.cell_dofs[tc];
    for (int j = 0; j < ndk; ++j) grad[kd[j].first] += kd[j].second * gloc[j];
  }
  return grad;
}

}  // namespace feinn
