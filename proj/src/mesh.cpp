#include "feinn/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

namespace feinn {

namespace {

// Local edges as (first, second) local vertex, directions +x,+y,+x,+y.
constexpr int kEdgeVerts[4][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}};

void connect_edges(Mesh& m) {
  std::map<std::array<int, 2>, int> edge_ids;
  std::vector<int> use_count;
  m.cell_edges.resize(m.cells.size());
  for (size_t c = 0; c < m.cells.size(); ++c) {
    for (int le = 0; le < 4; ++le) {
      int a = m.cells[c][kEdgeVerts[le][0]];
      int b = m.cells[c][kEdgeVerts[le][1]];
      bool flip = a > b;
      std::array<int, 2> key = {std::min(a, b), std::max(a, b)};
      auto it = edge_ids.find(key);
      if (it == edge_ids.end()) {
        it = edge_ids.emplace(key, static_cast<int>(m.edges.size())).first;
        m.edges.push_back(key);
        use_count.push_back(0);
      }
      m.cell_edges[c][le] = EdgeUse{it->second, flip};
      use_count[it->second]++;
    }
  }
  m.edge_boundary.resize(m.edges.size());
  for (size_t e = 0; e < m.edges.size(); ++e) {
    require(use_count[e] == 1 || use_count[e] == 2, "mesh: broken edge incidence");
    m.edge_boundary[e] = (use_count[e] == 1);
  }
}

struct Vec3Key {
  long long a, b, c;
  bool operator<(const Vec3Key& o) const {
    return std::tie(a, b, c) < std::tie(o.a, o.b, o.c);
  }
};

Vec3Key quantize(const Vec3& v) {
  auto q = [](double x) { return static_cast<long long>(std::llround(x * 1e12)); };
  return {q(v.x()), q(v.y()), q(v.z())};
}

}  // namespace

int Mesh::num_boundary_edges() const {
  return static_cast<int>(std::count(edge_boundary.begin(), edge_boundary.end(), true));
}

CellGeometry Mesh::cell_geometry(int cell, const Vec2& xhat) const {
  require(cell >= 0 && cell < num_cells(), "cell_geometry: cell id out of range");
  CellGeometry g;
  if (!surface) {
    const double hx = (bounds.x1 - bounds.x0) / nx;
    const double hy = (bounds.y1 - bounds.y0) / ny;
    int i = cell % nx, j = cell / nx;
    g.x = Vec3(bounds.x0 + hx * (i + 0.5 * (xhat.x() + 1.0)),
               bounds.y0 + hy * (j + 0.5 * (xhat.y() + 1.0)), 0.0);
    g.J.setZero();
    g.J(0, 0) = 0.5 * hx;
    g.J(1, 1) = 0.5 * hy;
    g.G = g.J.transpose() * g.J;
    g.detJ = 0.25 * hx * hy;
    g.sqrt_detG = std::abs(g.detJ);
    return g;
  }
  const PanelCell& pc = panel_cells[cell];
  const double xi = pc.xi0 + 0.5 * (xhat.x() + 1.0) * (pc.xi1 - pc.xi0);
  const double eta = pc.eta0 + 0.5 * (xhat.y() + 1.0) * (pc.eta1 - pc.eta0);
  const double txi = std::tan(xi), teta = std::tan(eta);
  const Vec3 v = pc.center + pc.axis_a * txi + pc.axis_b * teta;
  const double nrm = v.norm();
  const Vec3 X = v / nrm;
  // d(v/|v|) = (I - X X^T) dv / |v|
  auto project = [&](const Vec3& dv) { return (dv - X * X.dot(dv)) / nrm; };
  const double sec2xi = 1.0 + txi * txi, sec2eta = 1.0 + teta * teta;
  const Vec3 dxi = project(pc.axis_a * sec2xi) * (0.5 * (pc.xi1 - pc.xi0));
  const Vec3 deta = project(pc.axis_b * sec2eta) * (0.5 * (pc.eta1 - pc.eta0));
  g.x = X;
  g.J.col(0) = dxi;
  g.J.col(1) = deta;
  g.G = g.J.transpose() * g.J;
  const double detG = g.G(0, 0) * g.G(1, 1) - g.G(0, 1) * g.G(1, 0);
  require(detG > 0.0, "cell_geometry: degenerate metric");
  g.sqrt_detG = std::sqrt(detG);
  g.detJ = g.sqrt_detG;
  return g;
}

void Mesh::locate(const Vec3& x, int& cell, Vec2& xhat) const {
  if (!surface) {
    const double tol = 1e-12 * (std::abs(bounds.x1 - bounds.x0) + std::abs(bounds.y1 - bounds.y0));
    require(x.x() >= bounds.x0 - tol && x.x() <= bounds.x1 + tol &&
                x.y() >= bounds.y0 - tol && x.y() <= bounds.y1 + tol,
            "locate: point outside domain");
    const double hx = (bounds.x1 - bounds.x0) / nx;
    const double hy = (bounds.y1 - bounds.y0) / ny;
    int i = std::clamp(static_cast<int>(std::floor((x.x() - bounds.x0) / hx)), 0, nx - 1);
    int j = std::clamp(static_cast<int>(std::floor((x.y() - bounds.y0) / hy)), 0, ny - 1);
    cell = j * nx + i;
    xhat.x() = 2.0 * (x.x() - (bounds.x0 + i * hx)) / hx - 1.0;
    xhat.y() = 2.0 * (x.y() - (bounds.y0 + j * hy)) / hy - 1.0;
    xhat = xhat.cwiseMax(-1.0).cwiseMin(1.0);
    return;
  }
  // Panel = largest |center . x|; then invert the gnomonic map.
  const Vec3 X = x.normalized();
  int best_panel = 0;
  double best = -2.0;
  for (int p = 0; p < 6; ++p) {
    const PanelCell& pc = panel_cells[static_cast<size_t>(p) * ne * ne];
    double d = pc.center.dot(X);
    if (d > best) {
      best = d;
      best_panel = p;
    }
  }
  const PanelCell& pf = panel_cells[static_cast<size_t>(best_panel) * ne * ne];
  const double xi = std::atan2(pf.axis_a.dot(X), pf.center.dot(X));
  const double eta = std::atan2(pf.axis_b.dot(X), pf.center.dot(X));
  const double delta = M_PI / 2.0 / ne;
  int i = std::clamp(static_cast<int>(std::floor((xi + M_PI / 4.0) / delta)), 0, ne - 1);
  int j = std::clamp(static_cast<int>(std::floor((eta + M_PI / 4.0) / delta)), 0, ne - 1);
  cell = best_panel * ne * ne + j * ne + i;
  const PanelCell& pc = panel_cells[cell];
  xhat.x() = 2.0 * (xi - pc.xi0) / (pc.xi1 - pc.xi0) - 1.0;
  xhat.y() = 2.0 * (eta - pc.eta0) / (pc.eta1 - pc.eta0) - 1.0;
  xhat = xhat.cwiseMax(-1.0).cwiseMin(1.0);
}

MeshPtr build_cartesian(int nx, int ny, const Rect& bounds) {
  require(nx >= 1 && ny >= 1, "build_cartesian: zero cell count");
  require(bounds.x1 > bounds.x0 && bounds.y1 > bounds.y0, "build_cartesian: degenerate bounds");
  auto m = std::make_shared<Mesh>();
  m->surface = false;
  m->ambient_dim = 2;
  m->nx = nx;
  m->ny = ny;
  m->bounds = bounds;
  const double wx = bounds.x1 - bounds.x0, wy = bounds.y1 - bounds.y0;
  m->vertices.reserve(static_cast<size_t>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      m->vertices.emplace_back(bounds.x0 + wx * i / nx, bounds.y0 + wy * j / ny, 0.0);
  auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
  m->cells.reserve(static_cast<size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      m->cells.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)});
  connect_edges(*m);
  return m;
}

MeshPtr uniform_refine(const MeshPtr& mesh, int times) {
  require(times >= 0, "uniform_refine: negative count");
  if (times == 0) return mesh;
  return refine_by_factor(mesh, 1 << times);
}

MeshPtr refine_by_factor(const MeshPtr& mesh, int factor) {
  require(factor >= 1, "refine_by_factor: factor must be positive");
  if (factor == 1) return mesh;
  if (mesh->surface) return build_cubed_sphere(mesh->ne * factor);
  return build_cartesian(mesh->nx * factor, mesh->ny * factor, mesh->bounds);
}

MeshPtr build_cubed_sphere(int ne) {
  require(ne >= 1, "build_cubed_sphere: ne must be positive");
  auto m = std::make_shared<Mesh>();
  m->surface = true;
  m->ambient_dim = 3;
  m->ne = ne;

  // Panel frames with axis_a x axis_b = center so cells are CCW seen from outside.
  const Vec3 ex(1, 0, 0), ey(0, 1, 0), ez(0, 0, 1);
  struct Panel {
    Vec3 c, a, b;
  };
  const Panel panels[6] = {{ex, ey, ez},   {-ex, ez, ey}, {ey, ez, ex},
                           {-ey, ex, ez},  {ez, ex, ey},  {-ez, ey, ex}};

  // Shared, symmetric tangent table with exact +-1 endpoints, so vertices on
  // panel seams agree bitwise before normalisation.
  const double delta = M_PI / 2.0 / ne;
  std::vector<double> tangent(ne + 1);
  for (int i = 0; i <= ne; ++i) tangent[i] = std::tan(-M_PI / 4.0 + i * delta);
  tangent[0] = -1.0;
  tangent[ne] = 1.0;
  for (int i = 0; i <= ne / 2; ++i) {
    tangent[ne - i] = -tangent[i];
  }
  if (ne % 2 == 0) tangent[ne / 2] = 0.0;

  std::map<Vec3Key, int> vertex_ids;
  auto get_vertex = [&](const Vec3& unnormalized) {
    auto key = quantize(unnormalized);
    auto it = vertex_ids.find(key);
    if (it == vertex_ids.end()) {
      it = vertex_ids.emplace(key, static_cast<int>(m->vertices.size())).first;
      m->vertices.push_back(unnormalized.normalized());
    }
    return it->second;
  };

  for (const Panel& p : panels) {
    std::vector<int> grid((ne + 1) * (ne + 1));
    for (int j = 0; j <= ne; ++j)
      for (int i = 0; i <= ne; ++i)
        grid[j * (ne + 1) + i] = get_vertex(p.c + p.a * tangent[i] + p.b * tangent[j]);
    for (int j = 0; j < ne; ++j)
      for (int i = 0; i < ne; ++i) {
        m->cells.push_back({grid[j * (ne + 1) + i], grid[j * (ne + 1) + i + 1],
                            grid[(j + 1) * (ne + 1) + i + 1], grid[(j + 1) * (ne + 1) + i]});
        Mesh::PanelCell pc;
        pc.center = p.c;
        pc.axis_a = p.a;
        pc.axis_b = p.b;
        pc.xi0 = -M_PI / 4.0 + i * delta;
        pc.xi1 = -M_PI / 4.0 + (i + 1) * delta;
        pc.eta0 = -M_PI / 4.0 + j * delta;
        pc.eta1 = -M_PI / 4.0 + (j + 1) * delta;
        m->panel_cells.push_back(pc);
      }
  }
  connect_edges(*m);
  require(m->num_boundary_edges() == 0, "build_cubed_sphere: surface is not closed");
  return m;
}

}  // namespace feinn
