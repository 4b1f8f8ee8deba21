#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "invadapt/time_solver.hpp"

using namespace invadapt;

namespace {

MeshPtr cube(int n) { return std::make_shared<const SimplicialMesh>(build_structured_cube(n)); }

SparseOperator tridiag(Index n, double diag, double off) {
  std::vector<Index> rp{0}, cols;
  for (Index i = 0; i < n; ++i) {
    for (Index j = std::max<Index>(0, i - 1); j <= std::min<Index>(n - 1, i + 1); ++j) cols.push_back(j);
    rp.push_back(static_cast<Index>(cols.size()));
  }
  SparseOperator a(n, rp, cols);
  for (Index i = 0; i < n; ++i) {
    a.add(i, i, diag);
    if (i > 0) a.add(i, i - 1, off);
    if (i + 1 < n) a.add(i, i + 1, off * 0.5);
  }
  return a;
}

}  // namespace

TEST_CASE("linear_solve") {
  const auto a = tridiag(50, 4.0, -1.0);
  std::vector<double> b(50);
  for (int i = 0; i < 50; ++i) b[i] = std::sin(0.3 * i) + 1.0;

  const auto zero = linear_solve(a, std::vector<double>(50, 0.0));
  for (double x : zero.x) CHECK(x == 0.0);

  const auto it = linear_solve(a, b);
  CHECK(!it.dense);
  CHECK(it.relative_residual <= 1e-10);
  Eigen::MatrixXd d = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(a.to_dense().data(), 50, 50);
  const Eigen::VectorXd ref = d.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), 50));
  for (int i = 0; i < 50; ++i) CHECK(it.x[i] == doctest::Approx(ref[i]).epsilon(1e-8));

  LinearSolveOptions dense;
  dense.force_dense = true;
  const auto lu = linear_solve(a, b, dense);
  CHECK(lu.dense);
  for (int i = 0; i < 50; ++i) CHECK(lu.x[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  SUBCASE("singular matrix without fallback") {
    auto s = tridiag(10, 0.0, 0.0);
    s.add(0, 0, 1.0);
    std::vector<double> rhs(10, 1.0);
    LinearSolveOptions o;
    o.dense_fallback = false;
    o.max_iter = 50;
    CHECK_THROWS_AS(linear_solve(s, rhs, o), LinearSolveError);
  }
}

TEST_CASE("newton_solve") {
  const auto mesh = cube(4);
  const P1Space space(mesh);
  const auto p = parameter_set(1);

  SUBCASE("steady state converges at once") {
    const auto s = StateFields::constant(*mesh, 0, 1, 0);
    StepProblem prob{&p, 0.01, {}, 0.01};
    const auto r = newton_solve(space, s, prob);
    CHECK(r.record.k_n == 1);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(std::abs(r.state.u[i]) < 1e-14);
      CHECK(std::abs(r.state.v[i] - 1) < 1e-14);
    }
  }

  SUBCASE("manufactured step") {
    const auto mc = manufactured_case("A");
    const auto s0 = mc.interpolate(*mesh, 0.0);
    StepProblem prob{&mc.params, 1e-3, mc.source_fn(), 1e-3};
    const auto r = newton_solve(space, s0, prob);
    CHECK(r.record.k_n <= 4);
    CHECK(r.record.tau_n == 1e-3);
    const auto& h = r.record.newton_residual_history;
    REQUIRE(h.size() >= 2);
    CHECK(h.back() <= std::max(1e-10, 1e-8 * h.front()));
  }

  SUBCASE("quadratic tail") {
    const auto s0 = initial_conditions(*mesh, p);
    NewtonOptions o;
    o.abs_tol = 1e-15;
    o.rel_tol = 1e-15;
    StepProblem prob{&p, 0.2, {}, 0.2};
    const auto r = newton_solve(space, s0, prob, o);
    const auto& h = r.record.newton_residual_history;
    REQUIRE(h.size() >= 4);
    for (std::size_t k = 0; k + 1 < h.size(); ++k) {
      if (h[k] > 1e-11) CHECK(h[k + 1] <= 50.0 * h[k] * h[k]);
    }
  }

  SUBCASE("bad tau") {
    const auto s = StateFields::constant(*mesh, 0, 1, 0);
    StepProblem prob{&p, 0.0, {}, 0.0};
    CHECK_THROWS_AS(newton_solve(space, s, prob), InputError);
    prob.tau = -1.0;
    CHECK_THROWS_AS(newton_solve(space, s, prob), InputError);
  }
}

TEST_CASE("time_loop") {
  const auto mesh = cube(3);
  const P1Space space(mesh);
  const auto p = parameter_set(1);
  const auto s0 = initial_conditions(*mesh, p);

  const auto tr = time_loop(space, s0, p, 0.3, 0.1);
  CHECK(tr.completed);
  REQUIRE(tr.records.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(tr.records[k].n == k + 1);
    CHECK(tr.records[k].t_n == doctest::Approx(0.1 * (k + 1)).epsilon(1e-14));
    CHECK(tr.records[k].mesh_id == mesh->id());
  }
  CHECK(tr.states.size() == 3);

  SUBCASE("last step clipped") {
    const auto c = time_loop(space, s0, p, 0.25, 0.1);
    REQUIRE(c.records.size() == 3);
    CHECK(std::abs(c.records.back().t_n - 0.25) < 1e-14);
    CHECK(c.records.back().tau_n == doctest::Approx(0.05).epsilon(1e-12));
  }

  SUBCASE("deterministic") {
    const auto again = time_loop(space, s0, p, 0.3, 0.1);
    CHECK(again.final_state.u == tr.final_state.u);
    CHECK(again.final_state.w == tr.final_state.w);
  }

  SUBCASE("steady trajectory") {
    const auto st = StateFields::constant(*mesh, 0, 1, 0);
    const auto r = time_loop(space, st, p, 0.5, 0.1);
    for (double x : r.final_state.u) CHECK(std::abs(x) < 1e-14);
    for (double x : r.final_state.v) CHECK(std::abs(x - 1) < 1e-14);
  }

  SUBCASE("temporal control never exceeds the initial step") {
    TimeLoopOptions o;
    o.temporal_control = true;
    o.temporal_tol = 1e-4;
    const auto c = time_loop(space, s0, p, 0.3, 0.1, o);
    CHECK(c.completed);
    for (const auto& r : c.records) CHECK(r.tau_n <= 0.1 + 1e-15);
    CHECK(std::abs(c.records.back().t_n - 0.3) < 1e-12);
    CHECK(c.records.size() > 3);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto mesh = cube(2);
  const auto s = initial_conditions(*mesh, parameter_set(1));
  const auto dir = std::filesystem::temp_directory_path() / "invadapt_ckpt_test";
  std::filesystem::remove_all(dir);
  write_checkpoint(dir.string(), *mesh, s, 0.5, 7);
  const auto c = read_checkpoint(dir.string());
  CHECK(c.time == 0.5);
  CHECK(c.step == 7);
  CHECK(c.mesh->same_content(*mesh));
  CHECK(c.state.u == s.u);
  CHECK(c.state.v == s.v);
  CHECK(c.state.w == s.w);
  CHECK(c.state.mesh_id == c.mesh->id());
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_checkpoint(dir.string()), InputError);
}
