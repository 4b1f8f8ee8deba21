#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "invadapt/mesh.hpp"

using namespace invadapt;

namespace {

std::vector<Index> all_tets(const SimplicialMesh& m) {
  std::vector<Index> v(m.num_tets());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Index>(i);
  return v;
}

// Exhaustive face-pair audit written independently of audit(): every sorted face key
// appears once on ∂Ω or twice inside.
bool faces_pair_up(const SimplicialMesh& m) {
  std::map<std::array<Index, 3>, int> count;
  for (const auto& t : m.tets())
    for (int skip = 0; skip < 4; ++skip) {
      std::array<Index, 3> f;
      int k = 0;
      for (int i = 0; i < 4; ++i)
        if (i != skip) f[k++] = t.v[i];
      std::sort(f.begin(), f.end());
      ++count[f];
    }
  for (const auto& [f, c] : count) {
    if (c == 2) continue;
    if (c != 1) return false;
    bool on_side = false;
    for (int ax = 0; ax < 3 && !on_side; ++ax)
      for (double side : {0.0, 1.0}) {
        bool all = true;
        for (Index v : f) all = all && m.vertices()[v][ax] == side;
        on_side = on_side || all;
      }
    if (!on_side) return false;
  }
  return true;
}

// No vertex of the mesh lies strictly inside an edge of any tet.
bool no_hanging_vertices(const SimplicialMesh& m) {
  std::set<std::pair<Index, Index>> edges;
  for (const auto& t : m.tets())
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) edges.insert(std::minmax(t.v[i], t.v[j]));
  std::map<std::array<double, 3>, Index> at;
  for (std::size_t i = 0; i < m.num_vertices(); ++i) {
    const auto& p = m.vertices()[i];
    at[{p.x, p.y, p.z}] = static_cast<Index>(i);
  }
  for (const auto& [a, b] : edges) {
    const Vec3 mid = 0.5 * (m.vertices()[a] + m.vertices()[b]);
    if (at.count({mid.x, mid.y, mid.z})) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("structured cube counts") {
  for (int n : {1, 2, 3, 20}) {
    const auto m = build_structured_cube(n);
    CHECK(m.num_vertices() == static_cast<std::size_t>((n + 1) * (n + 1) * (n + 1)));
    CHECK(m.num_tets() == static_cast<std::size_t>(6 * n * n * n));
  }
  const auto m20 = build_structured_cube(20);
  CHECK(m20.num_vertices() == 9261);
  CHECK(m20.num_tets() == 48000);
  CHECK_THROWS_AS(build_structured_cube(0), InputError);
}

TEST_CASE("structured cube invariants") {
  for (int n : {1, 2, 4}) {
    const auto m = build_structured_cube(n);
    const auto a = audit(m);
    CHECK(a.ok());
    CHECK(a.conforming);
    CHECK(a.positive_volumes);
    CHECK(a.total_volume == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.boundary_area == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(faces_pair_up(m));
    CHECK(no_hanging_vertices(m));
  }
}

TEST_CASE("diameters of the structured mesh") {
  const auto m = build_structured_cube(20);
  double lo = 1e300, hi = 0.0;
  for (std::size_t t = 0; t < m.num_tets(); ++t) {
    const auto p = m.tet_points(static_cast<Index>(t));
    double d = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) d = std::max(d, distance(p[i], p[j]));
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  // Every tet of a 6-tet cube split contains a main diagonal of its sub-cube.
  CHECK(lo == doctest::Approx(std::sqrt(3.0) / 20).epsilon(1e-14));
  CHECK(hi == doctest::Approx(std::sqrt(3.0) / 20).epsilon(1e-14));
  CHECK(m.min_diameter() == doctest::Approx(lo).epsilon(1e-15));
}

TEST_CASE("geometry of the reference tet") {
  SimplicialMesh m({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {Tet{{0, 1, 2, 3}, 3, 0, kNoIndex}});
  const auto g = geometry_tables(m);
  CHECK(g.tets[0].volume == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(g.tets[0].diameter == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  Vec3 sum;
  for (const auto& gl : g.tets[0].grad_lambda) sum += gl;
  CHECK(norm(sum) < 1e-15);
  CHECK(g.tets[0].grad_lambda[1].x == doctest::Approx(1.0));
  for (const auto& f : g.faces) CHECK(std::abs(norm(f.normal) - 1.0) < 1e-14);
}

TEST_CASE("degenerate tet is reported with its index") {
  SimplicialMesh m({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}}, {Tet{{0, 1, 2, 3}, 3, 0, kNoIndex}});
  try {
    geometry_tables(m);
    FAIL("expected ElementError");
  } catch (const ElementError& e) {
    CHECK(e.element() == 0);
  }
}

TEST_CASE("face normals and orientation") {
  const auto m = build_structured_cube(2);
  const auto g = geometry_tables(m);
  for (std::size_t f = 0; f < m.num_faces(); ++f) {
    const auto& face = m.faces()[f];
    CHECK(std::abs(norm(g.faces[f].normal) - 1.0) < 1e-14);
    // The normal points away from the left tet's opposite vertex.
    const auto& lt = m.tets()[face.left].v;
    Index opp = kNoIndex;
    for (Index v : lt)
      if (std::find(face.v.begin(), face.v.end(), v) == face.v.end()) opp = v;
    const Vec3 d = m.vertices()[face.v[0]] - m.vertices()[opp];
    CHECK(dot(d, g.faces[f].normal) > 0.0);
    if (!face.on_boundary()) CHECK(face.left < face.right);
  }
}

TEST_CASE("refine with empty marking is the identity") {
  const auto m = build_structured_cube(2);
  const auto r = refine(m, std::vector<Index>{});
  CHECK(r.same_content(m));
}

TEST_CASE("refining all tets of n=1 gives two children each") {
  const auto m = build_structured_cube(1);
  const auto r = refine(m, all_tets(m));
  CHECK(r.num_tets() == 12);
  CHECK(audit(r).ok());
  CHECK(faces_pair_up(r));
  CHECK(no_hanging_vertices(r));
  std::map<Index, int> children;
  for (const auto& t : r.tets()) ++children[t.parent];
  CHECK(children.size() == 6);
  for (const auto& [p, c] : children) CHECK(c == 2);
}

TEST_CASE("uniform refinement needs no closure and nests structured meshes") {
  for (int n : {1, 2}) {
    SimplicialMesh m = build_structured_cube(n);
    for (int k = 1; k <= 3; ++k) {
      m = refine(m, all_tets(m), {1e-6});
      CHECK(m.num_tets() == static_cast<std::size_t>(6 * n * n * n) << k);
      CHECK(audit(m).ok());
    }
    // Three bisection rounds halve every sub-cube: same tets as the 2n mesh.
    const auto fine = build_structured_cube(2 * n);
    std::set<std::array<std::array<double, 3>, 4>> a, b;
    auto key = [](const SimplicialMesh& mm, const Tet& t) {
      std::array<std::array<double, 3>, 4> k;
      for (int i = 0; i < 4; ++i) {
        const auto& p = mm.vertices()[t.v[i]];
        k[i] = {p.x, p.y, p.z};
      }
      std::sort(k.begin(), k.end());
      return k;
    };
    for (const auto& t : m.tets()) a.insert(key(m, t));
    for (const auto& t : fine.tets()) b.insert(key(fine, t));
    CHECK(a == b);
  }
}

TEST_CASE("local refinement closes to conformity") {
  const auto m = build_structured_cube(2);
  const std::vector<Index> marked{0};
  const auto r = refine(m, marked);
  CHECK(r.num_tets() > m.num_tets());
  CHECK(audit(r).ok());
  CHECK(faces_pair_up(r));
  CHECK(no_hanging_vertices(r));
  // Children of the marked tet are no larger than it.
  for (const auto& t : r.tets()) {
    if (t.parent == kNoIndex) continue;
    const Tet& parent = r.history()[t.parent];
    double dp = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) dp = std::max(dp, distance(r.vertices()[parent.v[i]], r.vertices()[parent.v[j]]));
    double dc = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) dc = std::max(dc, distance(r.vertices()[t.v[i]], r.vertices()[t.v[j]]));
    CHECK(dc <= dp + 1e-15);
  }
}

TEST_CASE("genealogy: children lie inside their parents") {
  SimplicialMesh m = build_structured_cube(1);
  std::mt19937 rng(3);
  for (int k = 0; k < 5; ++k) {
    std::vector<Index> marked;
    for (Index t = 0; t < static_cast<Index>(m.num_tets()); ++t)
      if (rng() % 3 == 0) marked.push_back(t);
    m = refine(m, marked, {1e-6});
  }
  for (const auto& t : m.tets()) {
    if (t.parent == kNoIndex) continue;
    const Tet& p = m.history()[t.parent];
    std::array<Vec3, 4> pp;
    for (int i = 0; i < 4; ++i) pp[i] = m.vertices()[p.v[i]];
    for (Index v : t.v) {
      const auto b = barycentric(pp, m.vertices()[v]);
      for (double x : b) CHECK(x >= -1e-12);
    }
  }
}

TEST_CASE("minimum size guard stops refinement") {
  const auto m = build_structured_cube(2);
  const auto r = refine(m, all_tets(m), {m.min_diameter()});
  CHECK(r.same_content(m));
  const auto r2 = refine(m, all_tets(m), {1e-3});
  CHECK(r2.min_diameter() <= m.min_diameter());
}

TEST_CASE("refine then coarsen restores the mesh") {
  const auto m = build_structured_cube(1);
  const std::vector<Index> marked{2};
  const auto r = refine(m, marked);
  const auto c = coarsen(r, all_tets(r));
  CHECK(c.skipped == 0);
  CHECK(c.mesh.num_tets() == m.num_tets());
  CHECK(c.mesh.num_vertices() == m.num_vertices());
  CHECK(audit(c.mesh).ok());
  CHECK(coarsen(m, all_tets(m)).mesh.same_content(m));  // level-0 tets stay
}

TEST_CASE("coarsen special markings") {
  const auto m = build_structured_cube(1);
  const auto r = refine(m, all_tets(m));
  SUBCASE("empty marking") {
    const auto c = coarsen(r, std::vector<Index>{});
    CHECK(c.skipped == 0);
    CHECK(c.mesh.same_content(r));
  }
  SUBCASE("one child only") {
    const std::vector<Index> one{0};
    const auto c = coarsen(r, one);
    CHECK(c.skipped == 1);
    CHECK(c.mesh.same_content(r));
  }
}

TEST_CASE("shape regularity does not degrade under repeated bisection") {
  SimplicialMesh m = build_structured_cube(1);
  double worst = 0.0;
  for (std::size_t t = 0; t < m.num_tets(); ++t) worst = std::max(worst, shape_ratio(m, static_cast<Index>(t)));
  const double base = worst;
  double max_seen = 0.0;
  for (int k = 0; k < 9; ++k) {
    m = refine(m, all_tets(m), {1e-9});
    max_seen = std::max(max_seen, audit(m).max_shape_ratio);
  }
  // Newest-vertex bisection cycles through finitely many similarity classes.
  SimplicialMesh m2 = m;
  m2 = refine(m2, all_tets(m2), {1e-9});
  m2 = refine(m2, all_tets(m2), {1e-9});
  m2 = refine(m2, all_tets(m2), {1e-9});
  CHECK(audit(m2).max_shape_ratio <= max_seen * (1 + 1e-9));
  CHECK(base > 0.0);
}

TEST_CASE("random refine/coarsen sequences keep invariants") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    SimplicialMesh m = build_structured_cube(1 + trial % 2);
    double hmin = m.min_diameter();
    for (int op = 0; op < 6; ++op) {
      std::vector<Index> marked;
      for (Index t = 0; t < static_cast<Index>(m.num_tets()); ++t)
        if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.3) marked.push_back(t);
      if (rng() % 3 == 0) {
        m = coarsen(m, marked).mesh;
        hmin = m.min_diameter();
      } else {
        m = refine(m, marked, {1e-4});
        CHECK(m.min_diameter() <= hmin + 1e-15);
        hmin = m.min_diameter();
      }
      const auto a = audit(m);
      REQUIRE(a.ok());
      CHECK(std::abs(a.total_volume - 1.0) <= 1e-12);
    }
    CHECK(faces_pair_up(m));
  }
}

TEST_CASE("point location and evaluation") {
  const auto m = build_structured_cube(3);
  PointLocator loc(m);
  std::vector<double> f(m.num_vertices());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto& p = m.vertices()[i];
    f[i] = 1.0 + 2.0 * p.x - p.y + 0.5 * p.z;
  }
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const Vec3 x{U(rng), U(rng), U(rng)};
    CHECK(evaluate_p1(m, loc, f, x) == doctest::Approx(1.0 + 2.0 * x.x - x.y + 0.5 * x.z).epsilon(1e-13));
  }
  CHECK(loc.locate({2.0, 0.5, 0.5}).tet == kNoIndex);
}

TEST_CASE("transfer maps") {
  const auto coarse = build_structured_cube(2);
  std::mt19937 rng(9);
  SimplicialMesh fine = coarse;
  for (int k = 0; k < 3; ++k) {
    std::vector<Index> marked;
    for (Index t = 0; t < static_cast<Index>(fine.num_tets()); ++t)
      if (rng() % 4 == 0) marked.push_back(t);
    fine = refine(fine, marked, {1e-6});
  }
  const auto map = build_transfer(coarse, fine);
  CHECK(map.source_id() == coarse.id());
  CHECK(map.target_id() == fine.id());
  for (const auto& s : map.stencils()) {
    double sum = 0.0;
    for (int i = 0; i < s.size; ++i) {
      CHECK(s.weight[i] >= 0.0);
      sum += s.weight[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
  }

  SUBCASE("linear functions are reproduced") {
    std::vector<double> x1(coarse.num_vertices());
    for (std::size_t i = 0; i < x1.size(); ++i) x1[i] = coarse.vertices()[i].x;
    const auto t = map.apply(x1);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i] - fine.vertices()[i].x) <= 1e-13);
    const auto ones = map.apply(std::vector<double>(coarse.num_vertices(), 1.0));
    for (double v : ones) CHECK(std::abs(v - 1.0) <= 1e-15);
  }
  SUBCASE("random field agrees at random points") {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> f(coarse.num_vertices());
    for (double& v : f) v = U(rng);
    const auto g = map.apply(f);
    PointLocator lc(coarse), lf(fine);
    for (int k = 0; k < 100; ++k) {
      const Vec3 x{U(rng), U(rng), U(rng)};
      CHECK(std::abs(evaluate_p1(coarse, lc, f, x) - evaluate_p1(fine, lf, g, x)) < 1e-12);
    }
  }
  SUBCASE("identity and structured nesting") {
    CHECK(build_transfer(fine, fine).is_identity());
    const auto m4 = build_structured_cube(4);
    CHECK_NOTHROW(build_transfer(coarse, m4));
    CHECK_THROWS_AS(build_transfer(build_structured_cube(3), m4), NotNestedError);
  }
}
