#include "feinn/fespace.hpp"

#include <cmath>
#include <set>

#include "feinn/quadrature.hpp"

namespace feinn {

double edge_dof_sign(bool flip, int moment) {
  // Reversing the edge parameter maps the Legendre moment of index q to
  // (-1)^(q+1) times the canonical one.
  if (!flip) return 1.0;
  return (moment % 2 == 0) ? -1.0 : 1.0;
}

namespace {

int interior_dofs_per_cell(const ElementDef& el) {
  int n = 0;
  for (const auto& d : el.dofs)
    if (d.entity.kind == DofEntity::Interior) ++n;
  return n;
}

// Ambient coefficient transform: moment coefficients act on the pullback, so
// the equivalent physical-frame coefficient is T * c with T as below.
Eigen::Matrix<double, 3, 2> pullback_transpose(const CellGeometry& g, Family fam) {
  Eigen::Matrix<double, 3, 2> T;
  if (fam == Family::Nedelec) {
    T = g.J;  // uhat = J^T u  =>  c . uhat = (J c) . u
  } else {
    // uhat = s G^{-1} J^T u with s = detJ (flat) or sqrt|G| (surface).
    T = g.detJ * (g.J * g.G.inverse());
  }
  return T;
}

void check_compatibility(const Mesh& mesh, const ElementDef& elem) {
  if (mesh.surface) {
    require(elem.family == Family::RaviartThomas || elem.family == Family::LagrangeDG,
            "build_space: surface meshes support Raviart-Thomas and DG elements only");
  }
}

}  // namespace

VecX FESpace::local_coeffs(int cell, const VecX& dofs_full) const {
  const auto& cd = cell_dofs[cell];
  VecX c(static_cast<int>(cd.size()));
  for (size_t i = 0; i < cd.size(); ++i) c[static_cast<int>(i)] = cd[i].second * dofs_full[cd[i].first];
  return c;
}

VecX FESpace::restrict_free(const VecX& full) const {
  VecX out(nfree);
  for (int i = 0; i < nfree; ++i) out[i] = full[free_dofs[i]];
  return out;
}

VecX FESpace::extend_free(const VecX& free) const {
  VecX out = VecX::Zero(ndofs);
  for (int i = 0; i < nfree; ++i) out[free_dofs[i]] = free[i];
  return out;
}

SpacePtr build_space(MeshPtr mesh, ElementPtr elem) {
  check_compatibility(*mesh, *elem);
  auto sp = std::make_shared<FESpace>();
  sp->mesh = mesh;
  sp->elem = elem;
  const int k = elem->order;
  const int nint = interior_dofs_per_cell(*elem);
  const int per_edge = elem->dofs_per_edge;

  sp->edge_owner.assign(mesh->num_edges(), {-1, -1, false});
  for (int c = 0; c < mesh->num_cells(); ++c)
    for (int le = 0; le < 4; ++le) {
      const EdgeUse& eu = mesh->cell_edges[c][le];
      if (sp->edge_owner[eu.edge].cell < 0) sp->edge_owner[eu.edge] = {c, le, eu.flip};
    }

  int vertex_base = 0, edge_base = 0, interior_base = 0;
  bool has_vertex_dofs = (elem->family == Family::LagrangeCG);
  if (has_vertex_dofs) edge_base = mesh->num_vertices();
  interior_base = edge_base + mesh->num_edges() * per_edge;
  sp->ndofs = interior_base + mesh->num_cells() * nint;

  if (elem->family == Family::LagrangeCG && k >= 3) {
    for (int c = 0; c < mesh->num_cells(); ++c)
      for (int le = 0; le < 4; ++le)
        require(!mesh->cell_edges[c][le].flip,
                "build_space: CG order >= 3 on meshes with flipped edges is unsupported");
  }

  sp->cell_dofs.resize(mesh->num_cells());
  for (int c = 0; c < mesh->num_cells(); ++c) {
    auto& cd = sp->cell_dofs[c];
    cd.reserve(elem->ndofs);
    for (const auto& dof : elem->dofs) {
      switch (dof.entity.kind) {
        case DofEntity::Vertex: {
          cd.emplace_back(vertex_base + mesh->cells[c][dof.entity.index], 1.0);
          break;
        }
        case DofEntity::Edge: {
          const EdgeUse& eu = mesh->cell_edges[c][dof.entity.index];
          double sign = (elem->family == Family::LagrangeCG)
                            ? 1.0
                            : edge_dof_sign(eu.flip, dof.entity.moment);
          cd.emplace_back(edge_base + eu.edge * per_edge + dof.entity.moment, sign);
          break;
        }
        case DofEntity::Interior: {
          cd.emplace_back(interior_base + c * nint + dof.entity.moment, 1.0);
          break;
        }
      }
    }
  }

  sp->constrained.assign(sp->ndofs, false);
  sp->free_index.resize(sp->ndofs);
  sp->free_dofs.resize(sp->ndofs);
  for (int i = 0; i < sp->ndofs; ++i) {
    sp->free_index[i] = i;
    sp->free_dofs[i] = i;
  }
  sp->nfree = sp->ndofs;
  return sp;
}

SpacePtr zero_trace_subspace(const SpacePtr& space) {
  require(!space->surface(), "zero_trace_subspace: closed surfaces have no boundary");
  auto sp = std::make_shared<FESpace>(*space);
  sp->zero_trace = true;
  const Mesh& mesh = *sp->mesh;
  const int per_edge = sp->elem->dofs_per_edge;
  const bool has_vertex_dofs = (sp->elem->family == Family::LagrangeCG);
  const int edge_base = has_vertex_dofs ? mesh.num_vertices() : 0;

  std::set<int> boundary_vertices;
  for (int e = 0; e < mesh.num_edges(); ++e)
    if (mesh.edge_boundary[e]) {
      boundary_vertices.insert(mesh.edges[e][0]);
      boundary_vertices.insert(mesh.edges[e][1]);
      for (int q = 0; q < per_edge; ++q) sp->constrained[edge_base + e * per_edge + q] = true;
    }
  if (has_vertex_dofs)
    for (int v : boundary_vertices) sp->constrained[v] = true;

  sp->free_dofs.clear();
  sp->free_index.assign(sp->ndofs, -1);
  for (int i = 0; i < sp->ndofs; ++i)
    if (!sp->constrained[i]) {
      sp->free_index[i] = static_cast<int>(sp->free_dofs.size());
      sp->free_dofs.push_back(i);
    }
  sp->nfree = static_cast<int>(sp->free_dofs.size());
  return sp;
}

SpacePtr linearized_test_space(const SpacePtr& trial) {
  const int k = trial->elem->order;
  if (k <= 1) return trial;
  // Lowest-order elements on the mesh of size h/k: each trial edge carries k
  // subedges, which matches the k moments per edge of the order-k element.
  MeshPtr fine = refine_by_factor(trial->mesh, k);
  ElementPtr lowest;
  switch (trial->elem->family) {
    case Family::Nedelec: lowest = nedelec_quad(1); break;
    case Family::RaviartThomas: lowest = raviart_thomas_quad(1); break;
    case Family::LagrangeCG: lowest = lagrange_quad(1, Continuity::CG); break;
    case Family::LagrangeDG: return trial;
  }
  SpacePtr sp = build_space(fine, lowest);
  if (trial->zero_trace) sp = zero_trace_subspace(sp);
  return sp;
}

namespace {

// Enumerate interpolation entities: emit, per entity, the physical points and
// the rows (global dof, per-point ambient coefficients) of the moment map.
void walk_interpolation(
    const FESpace& space,
    const std::function<void(const std::vector<Vec3>&,
                             const std::vector<std::pair<int, std::vector<VecX>>>&)>& emit) {
  const Mesh& mesh = *space.mesh;
  const ElementDef& el = *space.elem;
  const int per_edge = el.dofs_per_edge;
  const int nint = interior_dofs_per_cell(el);
  const bool has_vertex_dofs = (el.family == Family::LagrangeCG);
  const int edge_base = has_vertex_dofs ? mesh.num_vertices() : 0;
  const int interior_base = edge_base + mesh.num_edges() * per_edge;
  const bool vector = el.ncomp == 2;

  if (has_vertex_dofs) {
    for (int v = 0; v < mesh.num_vertices(); ++v) {
      std::vector<Vec3> pts{mesh.vertices[v]};
      std::vector<std::pair<int, std::vector<VecX>>> rows;
      rows.emplace_back(v, std::vector<VecX>{VecX::Ones(1)});
      emit(pts, rows);
    }
  }

  // Local dof indices grouped by entity, in element construction order.
  std::vector<std::vector<int>> edge_local(4);
  std::vector<int> interior_local;
  for (int i = 0; i < el.ndofs; ++i) {
    const auto& ent = el.dofs[i].entity;
    if (ent.kind == DofEntity::Edge) edge_local[ent.index].push_back(i);
    if (ent.kind == DofEntity::Interior) interior_local.push_back(i);
  }

  if (per_edge > 0) {
    for (int e = 0; e < mesh.num_edges(); ++e) {
      const FESpace::EdgeOwner& own = space.edge_owner[e];
      const std::vector<int>& locals = edge_local[own.local_edge];
      const DofFunctional& first = el.dofs[locals[0]];
      std::vector<Vec3> pts(first.points.size());
      std::vector<Eigen::Matrix<double, 3, 2>> T(first.points.size());
      for (size_t m = 0; m < first.points.size(); ++m) {
        CellGeometry g = mesh.cell_geometry(own.cell, first.points[m]);
        pts[m] = g.x;
        if (vector) T[m] = pullback_transpose(g, el.family);
      }
      std::vector<std::pair<int, std::vector<VecX>>> rows;
      for (int q = 0; q < per_edge; ++q) {
        const DofFunctional& dof = el.dofs[locals[q]];
        const double sign = (el.family == Family::LagrangeCG) ? 1.0 : edge_dof_sign(own.flip, q);
        std::vector<VecX> coefs(pts.size());
        for (size_t m = 0; m < pts.size(); ++m) {
          if (vector) {
            Vec3 c3 = T[m] * dof.coefs[m];
            coefs[m] = sign * c3.head(space.field_ncomp());
          } else {
            coefs[m] = sign * dof.coefs[m];
          }
        }
        rows.emplace_back(edge_base + e * per_edge + q, std::move(coefs));
      }
      emit(pts, rows);
    }
  }

  if (nint > 0) {
    for (int c = 0; c < mesh.num_cells(); ++c) {
      const DofFunctional& first = el.dofs[interior_local[0]];
      const bool shared_points = el.family != Family::LagrangeCG;
      if (shared_points) {
        std::vector<Vec3> pts(first.points.size());
        std::vector<Eigen::Matrix<double, 3, 2>> T(first.points.size());
        for (size_t m = 0; m < first.points.size(); ++m) {
          CellGeometry g = mesh.cell_geometry(c, first.points[m]);
          pts[m] = g.x;
          if (vector) T[m] = pullback_transpose(g, el.family);
        }
        std::vector<std::pair<int, std::vector<VecX>>> rows;
        for (size_t q = 0; q < interior_local.size(); ++q) {
          const DofFunctional& dof = el.dofs[interior_local[q]];
          std::vector<VecX> coefs(pts.size());
          for (size_t m = 0; m < pts.size(); ++m)
            coefs[m] = vector ? VecX((T[m] * dof.coefs[m]).head(space.field_ncomp()))
                              : dof.coefs[m];
          rows.emplace_back(interior_base + c * nint + dof.entity.moment, std::move(coefs));
        }
        emit(pts, rows);
      } else {
        // CG interior nodes: one point per dof.
        for (size_t q = 0; q < interior_local.size(); ++q) {
          const DofFunctional& dof = el.dofs[interior_local[q]];
          CellGeometry g = mesh.cell_geometry(c, dof.points[0]);
          std::vector<Vec3> pts{g.x};
          std::vector<std::pair<int, std::vector<VecX>>> rows;
          rows.emplace_back(interior_base + c * nint + dof.entity.moment,
                            std::vector<VecX>{dof.coefs[0]});
          emit(pts, rows);
        }
      }
    }
  }
}

}  // namespace

namespace {

VecX interpolate_impl(const FESpace& space, const Field& f, bool apply_constraints) {
  require(f.ncomp == space.field_ncomp(), "interpolate: field component mismatch");
  VecX dofs = VecX::Zero(space.ndofs);
  walk_interpolation(space, [&](const std::vector<Vec3>& pts,
                                const std::vector<std::pair<int, std::vector<VecX>>>& rows) {
    std::vector<VecX> samples(pts.size(), VecX(f.ncomp));
    for (size_t m = 0; m < pts.size(); ++m) f.eval(pts[m], samples[m].data());
    for (const auto& [dof, coefs] : rows) {
      if (apply_constraints && space.constrained[dof]) continue;
      double acc = 0.0;
      for (size_t m = 0; m < pts.size(); ++m) acc += coefs[m].dot(samples[m]);
      dofs[dof] = acc;
    }
  });
  return dofs;
}

}  // namespace

VecX interpolate(const FESpace& space, const Field& f) {
  return interpolate_impl(space, f, /*apply_constraints=*/true);
}

VecX dirichlet_offset(const FESpace& space, const Field& g) {
  require(!space.surface(), "dirichlet_offset: closed surfaces have no boundary");
  require(g.ncomp == space.field_ncomp(), "dirichlet_offset: field component mismatch");
  const Mesh& mesh = *space.mesh;
  // Raw moments everywhere, then keep only boundary-entity DOFs.
  VecX all = interpolate_impl(space, g, /*apply_constraints=*/false);
  VecX out = VecX::Zero(space.ndofs);
  const bool has_vertex_dofs = (space.elem->family == Family::LagrangeCG);
  const int per_edge = space.elem->dofs_per_edge;
  const int edge_base = has_vertex_dofs ? mesh.num_vertices() : 0;
  for (int e = 0; e < mesh.num_edges(); ++e)
    if (mesh.edge_boundary[e])
      for (int q = 0; q < per_edge; ++q)
        out[edge_base + e * per_edge + q] = all[edge_base + e * per_edge + q];
  if (has_vertex_dofs) {
    for (int e = 0; e < mesh.num_edges(); ++e)
      if (mesh.edge_boundary[e]) {
        out[mesh.edges[e][0]] = all[mesh.edges[e][0]];
        out[mesh.edges[e][1]] = all[mesh.edges[e][1]];
      }
  }
  return out;
}

InterpolationPlan interpolation_plan(const FESpace& space) {
  InterpolationPlan plan;
  plan.ncomp = space.field_ncomp();
  std::vector<Eigen::Triplet<double>> trips;
  walk_interpolation(space, [&](const std::vector<Vec3>& pts,
                                const std::vector<std::pair<int, std::vector<VecX>>>& rows) {
    bool any_active = false;
    for (const auto& [dof, coefs] : rows)
      if (!space.constrained[dof]) any_active = true;
    if (!any_active) return;
    const int base = static_cast<int>(plan.points.size());
    plan.points.insert(plan.points.end(), pts.begin(), pts.end());
    for (const auto& [dof, coefs] : rows) {
      if (space.constrained[dof]) continue;
      for (size_t m = 0; m < pts.size(); ++m)
        for (int c = 0; c < plan.ncomp; ++c)
          if (coefs[m][c] != 0.0)
            trips.emplace_back(dof, (base + static_cast<int>(m)) * plan.ncomp + c, coefs[m][c]);
    }
  });
  plan.P.resize(space.ndofs, static_cast<int>(plan.points.size()) * plan.ncomp);
  plan.P.setFromTriplets(trips.begin(), trips.end());
  return plan;
}

MatX InterpolationPlan::point_matrix(int ambient_dim) const {
  MatX X(static_cast<int>(points.size()), ambient_dim);
  for (size_t i = 0; i < points.size(); ++i)
    X.row(static_cast<int>(i)) = points[i].head(ambient_dim).transpose();
  return X;
}

ShapeTable shape_table(const ElementDef& elem, const std::vector<Vec2>& points) {
  ShapeTable t;
  t.points = points;
  t.values.resize(points.size());
  if (elem.ncomp == 2) t.curls_or_divs.resize(points.size());
  if (elem.ncomp == 1) t.grads.resize(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    elem.shape_values(points[i], t.values[i]);
    if (elem.ncomp == 2) {
      if (elem.family == Family::Nedelec)
        elem.shape_curls(points[i], t.curls_or_divs[i]);
      else
        elem.shape_divs(points[i], t.curls_or_divs[i]);
    } else {
      elem.shape_grads(points[i], t.grads[i]);
    }
  }
  return t;
}

void eval_fe_function(const FESpace& space, const VecX& dofs_full,
                      const std::vector<Vec3>& points, MatX& values, VecX* deriv) {
  require(dofs_full.size() == space.ndofs, "eval_fe_function: dof vector size mismatch");
  const ElementDef& el = *space.elem;
  const int ncomp = space.field_ncomp();
  values.setZero(static_cast<int>(points.size()), ncomp);
  if (deriv) deriv->setZero(static_cast<int>(points.size()));
  MatX shapes;
  VecX dshapes;
  MatX grads;
  for (size_t p = 0; p < points.size(); ++p) {
    int cell;
    Vec2 xhat;
    space.mesh->locate(points[p], cell, xhat);
    CellGeometry g = space.mesh->cell_geometry(cell, xhat);
    VecX coef = space.local_coeffs(cell, dofs_full);
    el.shape_values(xhat, shapes);
    VecX uhat = shapes.transpose() * coef;  // ncomp(ref)
    const int row = static_cast<int>(p);
    if (el.ncomp == 1) {
      values(row, 0) = uhat[0];
      continue;
    }
    if (el.family == Family::Nedelec) {
      // covariant: u = J^{-T} uhat (flat only)
      Mat2 J2 = g.J.topLeftCorner<2, 2>();
      Vec2 u = J2.inverse().transpose() * Vec2(uhat[0], uhat[1]);
      values(row, 0) = u.x();
      values(row, 1) = u.y();
      if (deriv) {
        el.shape_curls(xhat, dshapes);
        (*deriv)[row] = dshapes.dot(coef) / g.detJ;
      }
    } else {
      // contravariant: u = J uhat / detJ (flat) or J uhat / sqrt|G| (surface)
      Vec3 u = g.J * Vec2(uhat[0], uhat[1]) / g.detJ;
      for (int c = 0; c < ncomp; ++c) values(row, c) = u[c];
      if (deriv) {
        el.shape_divs(xhat, dshapes);
        (*deriv)[row] = dshapes.dot(coef) / g.detJ;
      }
    }
  }
}

namespace {

// Shared quadrature loop for error norms: callback produces the pointwise
// difference (values and optional derivative scalar) to accumulate.
ErrorNorms quad_norm_loop(const Mesh& mesh, int quad_per_axis,
                          const std::function<void(int, const Vec2&, const CellGeometry&,
                                                   VecX&, double&)>& diff_at,
                          int ncomp) {
  QuadRule q = tensor_rule(quad_per_axis);
  double l2 = 0.0, dsq = 0.0;
  VecX d(ncomp);
  for (int c = 0; c < mesh.num_cells(); ++c) {
    for (size_t i = 0; i < q.points.size(); ++i) {
      CellGeometry g = mesh.cell_geometry(c, q.points[i]);
      double dd = 0.0;
      diff_at(c, q.points[i], g, d, dd);
      l2 += q.weights[i] * g.detJ * d.squaredNorm();
      dsq += q.weights[i] * g.detJ * dd * dd;
    }
  }
  return {std::sqrt(l2), std::sqrt(dsq)};
}

}  // namespace

ErrorNorms fe_error_norms(const FESpace& space, const VecX& dofs_full, const Field& exact,
                          const Field* exact_deriv, int quad_per_axis) {
  require(exact.ncomp == space.field_ncomp(), "fe_error_norms: component mismatch");
  const ElementDef& el = *space.elem;
  QuadRule q = tensor_rule(quad_per_axis);
  ShapeTable table = shape_table(el, q.points);
  const int ncomp = space.field_ncomp();
  double l2 = 0.0, dsq = 0.0;
  VecX ex(ncomp), dex(1);
  for (int c = 0; c < space.mesh->num_cells(); ++c) {
    VecX coef = space.local_coeffs(c, dofs_full);
    for (size_t i = 0; i < q.points.size(); ++i) {
      CellGeometry g = space.mesh->cell_geometry(c, q.points[i]);
      exact.eval(g.x, ex.data());
      double diff2 = 0.0;
      if (el.ncomp == 1) {
        double v = table.values[i].col(0).dot(coef);
        diff2 = (v - ex[0]) * (v - ex[0]);
      } else {
        VecX uhat = table.values[i].transpose() * coef;
        if (el.family == Family::Nedelec) {
          Mat2 J2 = g.J.topLeftCorner<2, 2>();
          Vec2 u = J2.inverse().transpose() * Vec2(uhat[0], uhat[1]);
          diff2 = (u - Vec2(ex[0], ex[1])).squaredNorm();
        } else {
          Vec3 u = g.J * Vec2(uhat[0], uhat[1]) / g.detJ;
          Vec3 e3 = Vec3::Zero();
          for (int cc = 0; cc < ncomp; ++cc) e3[cc] = ex[cc];
          diff2 = (u - e3).squaredNorm();
        }
      }
      l2 += q.weights[i] * g.detJ * diff2;
      if (exact_deriv && el.ncomp == 2) {
        exact_deriv->eval(g.x, dex.data());
        double dv = table.curls_or_divs[i].dot(coef) / g.detJ;
        dsq += q.weights[i] * g.detJ * (dv - dex[0]) * (dv - dex[0]);
      }
    }
  }
  return {std::sqrt(l2), std::sqrt(dsq)};
}

ErrorNorms field_norms(const Mesh& mesh, const Field& f, const Field* f_deriv, int quad_per_axis) {
  return quad_norm_loop(
      mesh, quad_per_axis,
      [&](int, const Vec2&, const CellGeometry& g, VecX& d, double& dd) {
        d.resize(f.ncomp);
        f.eval(g.x, d.data());
        dd = 0.0;
        if (f_deriv) dd = f_deriv->scalar(g.x);
      },
      f.ncomp);
}

SpMat observation_matrix(const FESpace& space, const std::vector<Vec3>& locations,
                         const std::vector<int>& components) {
  const ElementDef& el = *space.elem;
  const int nc = static_cast<int>(components.size());
  std::vector<Eigen::Triplet<double>> trips;
  MatX shapes;
  for (size_t p = 0; p < locations.size(); ++p) {
    int cell;
    Vec2 xhat;
    space.mesh->locate(locations[p], cell, xhat);
    CellGeometry g = space.mesh->cell_geometry(cell, xhat);
    el.shape_values(xhat, shapes);
    // physical-frame rows of each local shape function
    MatX phys;
    if (el.ncomp == 1) {
      phys = shapes;
    } else if (el.family == Family::Nedelec) {
      const Mat2 JinvT = g.J.topLeftCorner<2, 2>().inverse().transpose();
      phys = shapes * JinvT.transpose();
    } else {
      phys = shapes * (g.J.transpose() / g.detJ);
    }
    const auto& cd = space.cell_dofs[cell];
    for (int c = 0; c < nc; ++c) {
      const int row = static_cast<int>(p) * nc + c;
      for (int i = 0; i < el.ndofs; ++i) {
        const double v = cd[i].second * phys(i, components[c]);
        if (v != 0.0) trips.emplace_back(row, cd[i].first, v);
      }
    }
  }
  SpMat O(static_cast<int>(locations.size()) * nc, space.ndofs);
  O.setFromTriplets(trips.begin(), trips.end());
  return O;
}

}  // namespace feinn
