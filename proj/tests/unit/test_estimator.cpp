#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "invadapt/estimator.hpp"
#include "invadapt/time_solver.hpp"
#include "oracle.hpp"

using namespace invadapt;

namespace {

MeshPtr cube(int n) { return std::make_shared<const SimplicialMesh>(build_structured_cube(n)); }

StateFields random_state(const SimplicialMesh& mesh, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(0, 1);
  auto s = StateFields::zeros(mesh);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s.u[i] = U(rng);
    s.v[i] = U(rng);
    s.w[i] = U(rng);
  }
  return s;
}

Eigen::Vector3d centroid(const oracle::Element& e) { return (e.p[0] + e.p[1] + e.p[2] + e.p[3]) / 4.0; }

// Unit face normal pointing away from tet `from`.
Eigen::Vector3d face_normal(const SimplicialMesh& mesh, const Face& f, const oracle::Element& from) {
  const auto& x = mesh.vertices();
  auto p = [&](int k) { return Eigen::Vector3d(x[f.v[k]].x, x[f.v[k]].y, x[f.v[k]].z); };
  Eigen::Vector3d n = (p(1) - p(0)).cross(p(2) - p(0)).normalized();
  if (n.dot(p(0) - centroid(from)) < 0) n = -n;
  return n;
}

double report_max(const EstimatorReport& r) {
  double m = std::max({r.alpha, r.theta, r.gamma, r.kappa});
  for (double x : r.marking) m = std::max(m, std::abs(x));
  return m;
}

ModelParams nonlinear_d1() {
  auto p = parameter_set(1);
  p.d1 = DiffusionCoefficient::custom(
      [](double u, double v, double) { return 1e-4 * (1 + u * u + 0.5 * v); },
      [](double u, double, double) { return std::array<double, 3>{2e-4 * u, 0.5e-4, 0.0}; });
  return p;
}

}  // namespace

TEST_CASE("steady state has a zero estimator") {
  for (int set : {1, 2}) {
    const auto mesh = cube(4);
    const P1Space space(mesh);
    const auto s = StateFields::constant(*mesh, 0, 1, 0);
    const auto r = estimate(space, s, s, 0.01, parameter_set(set));
    CHECK(report_max(r) < 1e-14);
    CHECK(r.mesh_id == mesh->id());
  }
}

TEST_CASE("element residuals against a pointwise oracle") {
  const auto mesh = cube(2);
  const P1Space space(mesh);
  const auto p = parameter_set(1);
  const auto s = random_state(*mesh, 1), s0 = random_state(*mesh, 2);
  const double tau = 0.05;
  const ResidualEvaluator ev(space, s, s0, tau, p);
  const auto rule = oracle::duffy_rule(3);
  for (Index t = 0; t < static_cast<Index>(mesh->num_tets()); ++t) {
    const auto e = oracle::element(*mesh, t);
    const Eigen::Vector3d gu = oracle::grad_of(*mesh, t, e, s.u), gv = oracle::grad_of(*mesh, t, e, s.v);
    for (const auto& q : rule) {
      const double u = oracle::field_at(*mesh, t, s.u, q), v = oracle::field_at(*mesh, t, s.v, q),
                   w = oracle::field_at(*mesh, t, s.w, q);
      const double dv = (v - oracle::field_at(*mesh, t, s0.v, q)) / tau;
      const double du = (u - oracle::field_at(*mesh, t, s0.u, q)) / tau;
      const double dw = (w - oracle::field_at(*mesh, t, s0.w, q)) / tau;
      const double fv = p.rho * v * (1 - u - v) - p.eta * v * w;
      const double fw = p.alpha * u * (1 - w) - p.beta * w;
      const double g2 = p.lambda * u * (1 - u - v);
      // P1 fields: -∇·(d1∇u) vanishes, ∇·(χu∇v) = χ∇u·∇v.
      const double r1 = du + 0.005 * gu.dot(gv) - g2;
      const auto rho = ev.element_residual(t, q.bary);
      CHECK(rho[0] == doctest::Approx(r1).epsilon(1e-12).scale(1.0));
      CHECK(rho[1] == doctest::Approx(dv - fv).epsilon(1e-12).scale(1.0));
      CHECK(rho[2] == doctest::Approx(dw - fw).epsilon(1e-12).scale(1.0));
    }
  }
}

TEST_CASE("face residuals against per-tet gradients") {
  const auto mesh = cube(2);
  const P1Space space(mesh);
  const auto p = parameter_set(1);
  const auto s = random_state(*mesh, 3);
  const ResidualEvaluator ev(space, s, s, 0.1, p);
  const std::array<double, 3> mid{1.0 / 3, 1.0 / 3, 1.0 / 3};
  for (Index f = 0; f < static_cast<Index>(mesh->num_faces()); ++f) {
    const Face& face = mesh->faces()[f];
    const auto el = oracle::element(*mesh, face.left);
    const Eigen::Vector3d n = face_normal(*mesh, face, el);
    const Eigen::Vector3d gl = oracle::grad_of(*mesh, face.left, el, s.w);
    double expected;
    if (face.on_boundary()) {
      expected = p.d2 * gl.dot(n);
    } else {
      const auto er = oracle::element(*mesh, face.right);
      const Eigen::Vector3d gr = oracle::grad_of(*mesh, face.right, er, s.w);
      expected = -p.d2 * (gr - gl).dot(n);
    }
    const auto rho = ev.face_residual(f, mid);
    CHECK(rho[2] == doctest::Approx(expected).epsilon(1e-12).scale(1e-3));
    CHECK(rho[1] == 0.0);
  }
}

TEST_CASE("linear u has no interior jumps") {
  const auto mesh = cube(3);
  const P1Space space(mesh);
  const auto p = parameter_set(1);
  auto s = StateFields::constant(*mesh, 0, 0.5, 0.2);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& x = mesh->vertices()[i];
    s.u[i] = x.x + 2 * x.y - x.z;
  }
  const ResidualEvaluator ev(space, s, s, 0.1, p);
  const Vec3 gu{1, 2, -1};
  const double d1 = p.d1.constant_value();
  for (Index f = 0; f < static_cast<Index>(mesh->num_faces()); ++f) {
    const auto r = ev.face_residual(f, {0.2, 0.3, 0.5});
    const Face& face = mesh->faces()[f];
    if (face.on_boundary()) {
      const Vec3& n = space.geometry().faces[f].normal;
      CHECK(r[0] == doctest::Approx(d1 * dot(gu, n)).epsilon(1e-12).scale(1e-4));
    } else {
      CHECK(std::abs(r[0]) < 1e-16);
    }
  }
}

TEST_CASE("data error") {
  const auto mesh = cube(2);
  const P1Space space(mesh);
  const auto s = random_state(*mesh, 5);
  const auto r0 = estimate(space, s, s, 0.1, parameter_set(1));
  CHECK(r0.theta == 0.0);
  const auto pn = nonlinear_d1();
  const auto r1 = estimate(space, s, s, 0.1, pn);
  CHECK(r1.theta > 0.0);

  // Smooth data: Θ decreases under refinement.
  auto smooth = [](const SimplicialMesh& m) {
    auto st = StateFields::zeros(m);
    for (std::size_t i = 0; i < st.size(); ++i) {
      const auto& x = m.vertices()[i];
      st.u[i] = 0.5 + 0.4 * std::sin(3 * x.x) * std::cos(2 * x.y);
      st.v[i] = 0.5 + 0.3 * std::cos(2 * x.z);
      st.w[i] = 0.1;
    }
    return st;
  };
  double prev = std::numeric_limits<double>::infinity();
  for (int n : {2, 4, 8}) {
    const auto m = cube(n);
    const P1Space sp(m);
    const auto st = smooth(*m);
    const auto r = estimate(sp, st, st, 0.1, pn);
    CHECK(r.theta < prev);
    prev = r.theta;
  }
}

TEST_CASE("indicator bookkeeping") {
  const auto mesh = cube(2);
  const P1Space space(mesh);
  const auto s = random_state(*mesh, 7), s0 = random_state(*mesh, 8);
  const auto r = estimate(space, s, s0, 0.05, nonlinear_d1());
  double sum_marking = 0.0, sum_parts = 0.0;
  for (double m : r.marking) sum_marking += m;
  for (const auto& e : r.element_rho) sum_parts += e[0] + e[1] + e[2];
  for (const auto& e : r.face_rho) sum_parts += e[0] + e[1] + e[2];
  CHECK(sum_parts == doctest::Approx(r.alpha).epsilon(1e-13));
  CHECK(sum_marking == doctest::Approx(r.alpha + r.theta).epsilon(1e-13));
  CHECK(r.alpha == doctest::Approx(r.alpha_by_equation[0] + r.alpha_by_equation[1] + r.alpha_by_equation[2]));

  // A single nonzero face value lands 50/50 on interior neighbours, fully on a boundary one.
  const auto nf = mesh->num_faces(), nt = mesh->num_tets();
  ResidualNorms rho, eta;
  rho.element.assign(nt, {0, 0, 0});
  eta.element.assign(nt, {0, 0, 0});
  eta.face.assign(nf, {0, 0, 0});
  Index interior = kNoIndex, boundary = kNoIndex;
  for (Index f = 0; f < static_cast<Index>(nf); ++f) {
    if (mesh->faces()[f].on_boundary() && boundary == kNoIndex) boundary = f;
    if (!mesh->faces()[f].on_boundary() && interior == kNoIndex) interior = f;
  }
  for (Index f : {interior, boundary}) {
    rho.face.assign(nf, {0, 0, 0});
    rho.face[f] = {2.0, 5.0, 1.0};
    EstimatorReport rep;
    spatial_indicator(space, rho, eta, rep);
    const double v = 3.0 * space.geometry().faces[f].diameter;
    CHECK(rep.alpha == doctest::Approx(v));
    const Face& face = mesh->faces()[f];
    for (Index t = 0; t < static_cast<Index>(nt); ++t) {
      double want = 0.0;
      if (face.on_boundary()) {
        if (t == face.left) want = v;
      } else if (t == face.left || t == face.right) {
        want = 0.5 * v;
      }
      CHECK(rep.marking[t] == doctest::Approx(want));
    }
  }
  rho.face.pop_back();
  EstimatorReport rep;
  CHECK_THROWS_AS(spatial_indicator(space, rho, eta, rep), InputError);
}

TEST_CASE("temporal indicator") {
  const auto mesh = cube(3);
  const P1Space space(mesh);
  const auto p = parameter_set(1);
  const auto s = random_state(*mesh, 9);
  const auto same = temporal_indicator(space, s, s, 0.1, p);
  CHECK(same.gamma == 0.0);
  CHECK(same.kappa == 0.0);

  auto shifted = s;
  const double c = 0.3;
  for (double& x : shifted.u) x += c;
  const auto k = temporal_indicator(space, shifted, s, 0.1, p);
  CHECK(k.kappa == doctest::Approx(std::pow(c, 4)).epsilon(1e-12));
  EstimatorOptions plain;
  plain.kappa_squared = false;
  CHECK(temporal_indicator(space, shifted, s, 0.1, p, plain).kappa ==
        doctest::Approx(c * c).epsilon(1e-12));
  CHECK_THROWS_AS(temporal_indicator(space, shifted, s, 0.0, p), InputError);

  SUBCASE("κ scales with τ⁴ for a smooth trajectory") {
    const auto mc = manufactured_case("A");
    const auto m = cube(4);
    const P1Space sp(m);
    const auto s0 = mc.interpolate(*m, 0.0);
    std::array<double, 2> kappa{};
    for (int i = 0; i < 2; ++i) {
      const double tau = i == 0 ? 2e-4 : 1e-4;
      StepProblem prob{&mc.params, tau, mc.source_fn(), tau};
      const auto st = newton_solve(sp, s0, prob).state;
      kappa[i] = temporal_indicator(sp, st, s0, tau, mc.params).kappa;
    }
    CHECK(kappa[0] / kappa[1] == doctest::Approx(16.0).epsilon(0.1));
  }
}

TEST_CASE("spatial indicator decays with h") {
  const auto mc = manufactured_case("A");
  std::array<double, 2> a{};
  for (int i = 0; i < 2; ++i) {
    const auto m = cube(i == 0 ? 4 : 8);
    const P1Space sp(m);
    const double tau = 1e-3;
    const auto s0 = mc.interpolate(*m, 0.0);
    StepProblem prob{&mc.params, tau, mc.source_fn(), tau};
    const auto st = newton_solve(sp, s0, prob).state;
    EstimatorOptions o;
    o.source = mc.source_fn();
    o.time = tau;
    a[i] = std::sqrt(estimate(sp, st, s0, tau, mc.params, o).alpha);
  }
  const double ratio = a[0] / a[1];
  CHECK(ratio >= 1.5);
  CHECK(ratio <= 2.5);
}

TEST_CASE("effectivity") {
  CHECK(effectivity(1.0, 0.0) == std::numeric_limits<double>::infinity());
  CHECK(effectivity(0.0, 1.0) == 0.0);
  CHECK(effectivity(4.0, 0.5) == 4.0);
  EstimatorTotals totals;
  EstimatorReport r;
  r.alpha = 1.0;
  r.theta = 1.0;
  r.gamma = 0.5;
  r.kappa = 0.25;
  totals.add_step(r, 0.1);
  totals.initial = 0.05;
  CHECK(totals.spatial == doctest::Approx(0.2));
  CHECK(totals.temporal == doctest::Approx(0.75));
  CHECK(totals.total() == doctest::Approx(1.0));
}

TEST_CASE("report csv") {
  const auto mesh = cube(1);
  const P1Space space(mesh);
  const auto s = random_state(*mesh, 11);
  const auto r = estimate(space, s, s, 0.1, parameter_set(1));
  const auto path = std::filesystem::temp_directory_path() / "invadapt_est_test.csv";
  write_report_csv(path.string(), r);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "element,rho1,rho2,rho3,eta1,eta2,eta3,total");
  int rows = 0;
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    CHECK(std::stod(line.substr(last + 1)) == doctest::Approx(r.marking[rows]).epsilon(1e-15));
    ++rows;
  }
  CHECK(rows == 6);
  std::filesystem::remove(path);
}
