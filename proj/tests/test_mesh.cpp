#include <cmath>
#include <set>

#include "doctest.h"
#include "feinn/mesh.hpp"
#include "feinn/quadrature.hpp"

using namespace feinn;

TEST_CASE("cartesian mesh combinatorics") {
  auto m = build_cartesian(2, 2, {0, 0, 1, 1});
  CHECK(m->num_cells() == 4);
  CHECK(m->num_edges() == 12);
  CHECK(m->num_vertices() == 9);

  auto m1 = build_cartesian(1, 1, {0, 0, 1, 1});
  CHECK(m1->num_cells() == 1);
  CHECK(m1->num_edges() == 4);
  CHECK(m1->num_boundary_edges() == 4);

  auto m50 = build_cartesian(50, 50, {0, 0, 1, 1});
  CHECK(m50->num_cells() == 2500);
  CHECK(m50->num_edges() == 50 * 51 + 51 * 50);
}

TEST_CASE("construction errors") {
  CHECK_THROWS(build_cartesian(0, 2, {0, 0, 1, 1}));
  CHECK_THROWS(build_cartesian(2, 2, {0, 0, 0, 1}));
}

TEST_CASE("interior edges are shared with reconciled signs") {
  auto m = build_cartesian(3, 2, {0, 0, 1, 1});
  std::vector<int> count(m->num_edges(), 0);
  for (int c = 0; c < m->num_cells(); ++c)
    for (const auto& eu : m->cell_edges[c]) count[eu.edge]++;
  for (int e = 0; e < m->num_edges(); ++e)
    CHECK(count[e] == (m->edge_boundary[e] ? 1 : 2));
  // Lexicographic vertex numbering means no flips on a cartesian grid.
  for (int c = 0; c < m->num_cells(); ++c)
    for (const auto& eu : m->cell_edges[c]) CHECK(!eu.flip);
}

TEST_CASE("cell geometry on flat cells is the affine map") {
  auto m = build_cartesian(4, 2, {0, 0, 2, 1});
  auto g = m->cell_geometry(0, Vec2(0, 0));
  CHECK(g.x.x() == doctest::Approx(0.25));
  CHECK(g.x.y() == doctest::Approx(0.25));
  CHECK(g.J(0, 0) == doctest::Approx(0.25));  // hx/2
  CHECK(g.J(1, 1) == doctest::Approx(0.25));  // hy/2
  CHECK(g.detJ > 0.0);
  CHECK_THROWS(m->cell_geometry(999, Vec2(0, 0)));
}

TEST_CASE("uniform refinement") {
  auto m = build_cartesian(2, 2, {0, 0, 1, 1});
  auto r = uniform_refine(m, 1);
  CHECK(r->nx == 4);
  CHECK(r->ny == 4);
  auto same = uniform_refine(m, 0);
  CHECK(same.get() == m.get());
  auto m16 = build_cartesian(16, 16, {0, 0, 1, 1});
  auto r2 = uniform_refine(m16, 2);
  CHECK(r2->nx == 64);
  CHECK(r2->num_edges() == 8320);
  // Child vertices on parent lines coincide bitwise.
  CHECK(r->vertices[0] == m->vertices[0]);
  CHECK(r->vertices[2].x() == m->vertices[1].x());
}

TEST_CASE("refinement preserves boundary tags") {
  auto m = build_cartesian(3, 3, {0, 0, 1, 1});
  auto r = uniform_refine(m, 1);
  for (int e = 0; e < r->num_edges(); ++e) {
    const Vec3 a = r->vertices[r->edges[e][0]];
    const Vec3 b = r->vertices[r->edges[e][1]];
    bool on_bnd = (a.x() == 0 && b.x() == 0) || (a.x() == 1 && b.x() == 1) ||
                  (a.y() == 0 && b.y() == 0) || (a.y() == 1 && b.y() == 1);
    CHECK(r->edge_boundary[e] == on_bnd);
  }
}

TEST_CASE("edge connectivity is deterministic") {
  auto a = build_cartesian(5, 4, {0, 0, 1, 1});
  auto b = build_cartesian(5, 4, {0, 0, 1, 1});
  REQUIRE(a->num_edges() == b->num_edges());
  for (int e = 0; e < a->num_edges(); ++e) CHECK(a->edges[e] == b->edges[e]);
  auto s1 = build_cubed_sphere(3);
  auto s2 = build_cubed_sphere(3);
  for (int e = 0; e < s1->num_edges(); ++e) CHECK(s1->edges[e] == s2->edges[e]);
}

TEST_CASE("cubed sphere combinatorics") {
  auto s1 = build_cubed_sphere(1);
  CHECK(s1->num_cells() == 6);
  CHECK(s1->num_edges() == 12);
  CHECK(s1->num_vertices() == 8);
  CHECK(s1->num_boundary_edges() == 0);

  auto s4 = build_cubed_sphere(4);
  CHECK(s4->num_cells() == 96);
  CHECK(s4->num_edges() == 192);
  CHECK(s4->num_vertices() == 6 * 16 + 2);

  auto s50 = build_cubed_sphere(50);
  CHECK(s50->num_cells() == 15000);
  for (const auto& v : s50->vertices) CHECK(std::abs(v.norm() - 1.0) < 1e-13);
}

TEST_CASE("cubed sphere geometry: radius, tangency, area") {
  auto s = build_cubed_sphere(4);
  QuadRule q = tensor_rule(3);
  for (int c = 0; c < s->num_cells(); c += 7) {
    for (const auto& p : q.points) {
      auto g = s->cell_geometry(c, p);
      CHECK(std::abs(g.x.norm() - 1.0) < 1e-13);
      CHECK(std::abs(g.x.dot(g.J.col(0))) < 1e-12);
      CHECK(std::abs(g.x.dot(g.J.col(1))) < 1e-12);
      CHECK(g.sqrt_detG > 0.0);
    }
  }
  // Total area approaches 4*pi at the quadrature rate.
  auto area = [](const Mesh& mesh, int nq) {
    QuadRule qr = tensor_rule(nq);
    double a = 0.0;
    for (int c = 0; c < mesh.num_cells(); ++c)
      for (size_t i = 0; i < qr.points.size(); ++i)
        a += qr.weights[i] * mesh.cell_geometry(c, qr.points[i]).sqrt_detG;
    return a;
  };
  const double pi4 = 4.0 * M_PI;
  double coarse = std::abs(area(*build_cubed_sphere(1), 6) - pi4);
  double fine = std::abs(area(*build_cubed_sphere(4), 6) - pi4);
  CHECK(fine < coarse);
  CHECK(std::abs(area(*s, 12) - pi4) < 1e-10);
}

TEST_CASE("locate inverts the cell maps") {
  auto m = build_cartesian(7, 5, {0, 0, 1, 1});
  int cell;
  Vec2 xhat;
  m->locate(Vec3(0.513, 0.377, 0), cell, xhat);
  auto g = m->cell_geometry(cell, xhat);
  CHECK(g.x.x() == doctest::Approx(0.513));
  CHECK(g.x.y() == doctest::Approx(0.377));
  CHECK_THROWS(m->locate(Vec3(1.5, 0.5, 0), cell, xhat));

  auto s = build_cubed_sphere(5);
  Vec3 p = Vec3(0.3, -0.8, 0.52).normalized();
  s->locate(p, cell, xhat);
  auto gs = s->cell_geometry(cell, xhat);
  CHECK((gs.x - p).norm() < 1e-12);
}
