#include "feinn/refelem.hpp"

#include <cmath>

#include "feinn/quadrature.hpp"

namespace feinn {

double legendre(int n, double x) {
  double p0 = 1.0, p1 = x;
  if (n == 0) return p0;
  for (int k = 1; k < n; ++k) {
    double p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1);
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

double legendre_deriv(int n, double x) {
  if (n == 0) return 0.0;
  // P'_n = sum over descending parity: use recurrence P'_{k+1} = P'_{k-1} + (2k+1) P_k.
  double d0 = 0.0, d1 = 1.0;  // P'_0, P'_1
  if (n == 1) return d1;
  double p0 = 1.0, p1 = x;
  for (int k = 1; k < n; ++k) {
    double p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1);
    double d2 = d0 + (2 * k + 1) * p1;
    p0 = p1;
    p1 = p2;
    d0 = d1;
    d1 = d2;
  }
  return d1;
}

namespace {

// Local edges: bottom, right, top, left; reference traversal +x,+y,+x,+y.
Vec2 edge_point(int e, double s) {
  switch (e) {
    case 0: return Vec2(s, -1.0);
    case 1: return Vec2(1.0, s);
    case 2: return Vec2(s, 1.0);
    default: return Vec2(-1.0, s);
  }
}

Vec2 edge_tangent(int e) { return (e == 0 || e == 2) ? Vec2(1, 0) : Vec2(0, 1); }

// Normal tied to the reference traversal direction (tangent rotated by -90).
Vec2 edge_normal(int e) {
  Vec2 t = edge_tangent(e);
  return Vec2(t.y(), -t.x());
}

void add_edge_moments(ElementDef& el, int k, bool normal_component) {
  const GaussRule& g = gauss_legendre(k + 1);
  for (int e = 0; e < 4; ++e) {
    const Vec2 dir = normal_component ? edge_normal(e) : edge_tangent(e);
    for (int q = 0; q < k; ++q) {
      DofFunctional dof;
      dof.entity = {DofEntity::Edge, e, q};
      for (size_t m = 0; m < g.points.size(); ++m) {
        dof.points.push_back(edge_point(e, g.points[m]));
        VecX c(2);
        c << dir.x(), dir.y();
        c *= g.weights[m] * legendre(q, g.points[m]);
        dof.coefs.push_back(c);
      }
      el.dofs.push_back(std::move(dof));
    }
  }
}

// Interior moments against component-wise tensor Legendre test functions.
void add_interior_moments(ElementDef& el, int comp, int max_ix, int max_iy, int quad_n,
                          int& moment_counter) {
  if (max_ix < 0 || max_iy < 0) return;
  const QuadRule q = tensor_rule(quad_n);
  for (int iy = 0; iy <= max_iy; ++iy)
    for (int ix = 0; ix <= max_ix; ++ix) {
      DofFunctional dof;
      dof.entity = {DofEntity::Interior, 0, moment_counter++};
      for (size_t m = 0; m < q.points.size(); ++m) {
        dof.points.push_back(q.points[m]);
        VecX c = VecX::Zero(el.ncomp);
        c[comp] = q.weights[m] * legendre(ix, q.points[m].x()) * legendre(iy, q.points[m].y());
        dof.coefs.push_back(c);
      }
      el.dofs.push_back(std::move(dof));
    }
}


void finalize(ElementDef& el) {
  el.ndofs = static_cast<int>(el.dofs.size());
  require(el.ndofs == static_cast<int>(el.prebasis.size()),
          "element: moment count does not match prebasis dimension");
  MatX vals;
  MatX V(el.ndofs, el.ndofs);
  for (int i = 0; i < el.ndofs; ++i) {
    const DofFunctional& dof = el.dofs[i];
    for (int m = 0; m < el.ndofs; ++m) {
      const auto& t = el.prebasis[m];
      double acc = 0.0;
      for (size_t p = 0; p < dof.points.size(); ++p)
        acc += dof.coefs[p][t.comp] * legendre(t.ix, dof.points[p].x()) *
               legendre(t.iy, dof.points[p].y());
      V(i, m) = acc;
    }
  }
  Eigen::FullPivLU<MatX> lu(V);
  require(lu.isInvertible(), "element: moment set is not unisolvent");
  el.shape_coeffs = lu.inverse();  // columns: shape j in the prebasis
}

}  // namespace

void ElementDef::shape_values(const Vec2& xhat, MatX& out) const {
  out.setZero(ndofs, ncomp);
  for (size_t m = 0; m < prebasis.size(); ++m) {
    const auto& t = prebasis[m];
    const double v = legendre(t.ix, xhat.x()) * legendre(t.iy, xhat.y());
    for (int j = 0; j < ndofs; ++j) out(j, t.comp) += shape_coeffs(static_cast<int>(m), j) * v;
  }
}

void ElementDef::shape_curls(const Vec2& xhat, VecX& out) const {
  require(ncomp == 2, "shape_curls: vector elements only");
  out.setZero(ndofs);
  for (size_t m = 0; m < prebasis.size(); ++m) {
    const auto& t = prebasis[m];
    // curl(u) = dx u2 - dy u1
    const double v = (t.comp == 0)
                         ? -legendre(t.ix, xhat.x()) * legendre_deriv(t.iy, xhat.y())
                         : legendre_deriv(t.ix, xhat.x()) * legendre(t.iy, xhat.y());
    for (int j = 0; j < ndofs; ++j) out[j] += shape_coeffs(static_cast<int>(m), j) * v;
  }
}

void ElementDef::shape_divs(const Vec2& xhat, VecX& out) const {
  require(ncomp == 2, "shape_divs: vector elements only");
  out.setZero(ndofs);
  for (size_t m = 0; m < prebasis.size(); ++m) {
    const auto& t = prebasis[m];
    const double v = (t.comp == 0)
                         ? legendre_deriv(t.ix, xhat.x()) * legendre(t.iy, xhat.y())
                         : legendre(t.ix, xhat.x()) * legendre_deriv(t.iy, xhat.y());
    for (int j = 0; j < ndofs; ++j) out[j] += shape_coeffs(static_cast<int>(m), j) * v;
  }
}

void ElementDef::shape_grads(const Vec2& xhat, MatX& out) const {
  require(ncomp == 1, "shape_grads: scalar elements only");
  out.setZero(ndofs, 2);
  for (size_t m = 0; m < prebasis.size(); ++m) {
    const auto& t = prebasis[m];
    const double gx = legendre_deriv(t.ix, xhat.x()) * legendre(t.iy, xhat.y());
    const double gy = legendre(t.ix, xhat.x()) * legendre_deriv(t.iy, xhat.y());
    for (int j = 0; j < ndofs; ++j) {
      out(j, 0) += shape_coeffs(static_cast<int>(m), j) * gx;
      out(j, 1) += shape_coeffs(static_cast<int>(m), j) * gy;
    }
  }
}

double ElementDef::apply_dof(int i, const std::function<void(const Vec2&, double*)>& f) const {
  require(i >= 0 && i < ndofs, "apply_dof: index out of range");
  const DofFunctional& dof = dofs[i];
  VecX v(ncomp);
  double acc = 0.0;
  for (size_t p = 0; p < dof.points.size(); ++p) {
    f(dof.points[p], v.data());
    acc += dof.coefs[p].dot(v);
  }
  return acc;
}

ElementPtr nedelec_quad(int k) {
  require(k >= 1, "nedelec_quad: order must be >= 1");
  auto el = std::make_shared<ElementDef>();
  el->family = Family::Nedelec;
  el->order = k;
  el->ncomp = 2;
  el->dofs_per_edge = k;
  // Prebasis Q_{k-1,k} x Q_{k,k-1}.
  for (int iy = 0; iy <= k; ++iy)
    for (int ix = 0; ix <= k - 1; ++ix) el->prebasis.push_back({0, ix, iy});
  for (int iy = 0; iy <= k - 1; ++iy)
    for (int ix = 0; ix <= k; ++ix) el->prebasis.push_back({1, ix, iy});
  add_edge_moments(*el, k, /*normal=*/false);
  int mc = 0;
  add_interior_moments(*el, 0, k - 1, k - 2, 2 * k, mc);
  add_interior_moments(*el, 1, k - 2, k - 1, 2 * k, mc);
  finalize(*el);
  return el;
}

ElementPtr raviart_thomas_quad(int k) {
  require(k >= 1, "raviart_thomas_quad: order must be >= 1");
  auto el = std::make_shared<ElementDef>();
  el->family = Family::RaviartThomas;
  el->order = k;
  el->ncomp = 2;
  el->dofs_per_edge = k;
  // Prebasis Q_{k,k-1} x Q_{k-1,k}: the -90 degree rotation of the Nedelec one.
  for (int iy = 0; iy <= k - 1; ++iy)
    for (int ix = 0; ix <= k; ++ix) el->prebasis.push_back({0, ix, iy});
  for (int iy = 0; iy <= k; ++iy)
    for (int ix = 0; ix <= k - 1; ++ix) el->prebasis.push_back({1, ix, iy});
  add_edge_moments(*el, k, /*normal=*/true);
  int mc = 0;
  add_interior_moments(*el, 0, k - 2, k - 1, 2 * k, mc);
  add_interior_moments(*el, 1, k - 1, k - 2, 2 * k, mc);
  finalize(*el);
  return el;
}

ElementPtr lagrange_quad(int k, Continuity continuity) {
  if (continuity == Continuity::DG) {
    require(k == 0, "lagrange_quad: only DG_0 is supported");
    auto el = std::make_shared<ElementDef>();
    el->family = Family::LagrangeDG;
    el->order = 0;
    el->ncomp = 1;
    el->prebasis.push_back({0, 0, 0});
    DofFunctional dof;
    dof.entity = {DofEntity::Interior, 0, 0};
    dof.points.push_back(Vec2(0, 0));
    dof.coefs.push_back(VecX::Ones(1));
    el->dofs.push_back(std::move(dof));
    finalize(*el);
    return el;
  }
  require(k >= 1, "lagrange_quad: CG requires order >= 1");
  auto el = std::make_shared<ElementDef>();
  el->family = Family::LagrangeCG;
  el->order = k;
  el->ncomp = 1;
  el->dofs_per_edge = k - 1;
  for (int iy = 0; iy <= k; ++iy)
    for (int ix = 0; ix <= k; ++ix) el->prebasis.push_back({0, ix, iy});

  auto point_dof = [&](const Vec2& p, DofEntity ent) {
    DofFunctional dof;
    dof.entity = ent;
    dof.points.push_back(p);
    dof.coefs.push_back(VecX::Ones(1));
    el->dofs.push_back(std::move(dof));
  };
  const Vec2 verts[4] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
  for (int v = 0; v < 4; ++v) point_dof(verts[v], {DofEntity::Vertex, v, 0});
  for (int e = 0; e < 4; ++e)
    for (int q = 1; q < k; ++q)
      point_dof(edge_point(e, -1.0 + 2.0 * q / k), {DofEntity::Edge, e, q - 1});
  int mc = 0;
  for (int j = 1; j < k; ++j)
    for (int i = 1; i < k; ++i)
      point_dof(Vec2(-1.0 + 2.0 * i / k, -1.0 + 2.0 * j / k), {DofEntity::Interior, 0, mc++});
  finalize(*el);
  return el;
}

ElementPtr with_scaled_dofs(const ElementDef& elem, double factor) {
  auto el = std::make_shared<ElementDef>(elem);
  for (auto& dof : el->dofs)
    for (auto& c : dof.coefs) c *= factor;
  finalize(*el);
  return el;
}

}  // namespace feinn
