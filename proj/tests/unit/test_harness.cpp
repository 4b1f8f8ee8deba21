#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "invadapt/harness.hpp"
#include "invadapt/vtu.hpp"
#include "json.hpp"

using namespace invadapt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

RunConfig small_config() {
  RunConfig c;
  c.levels = {2};
  c.reference_n = 4;
  c.base_n = 2;
  c.tau = 0.01;
  c.t_final = 0.02;
  c.write_vtu = false;
  return c;
}

}  // namespace

TEST_CASE("config round trip") {
  RunConfig c;
  c.kind = ExperimentKind::adaptive;
  c.parameter_set = 2;
  c.param_overrides["d2"] = 1e-3;
  c.levels = {2, 3};
  c.tau = 0.1 / 3;
  c.amr.tol_x = 7e-4;
  c.amr.coarsening = false;
  c.amr.max_dofs = 12345;
  c.ladder_tol_x = {2e-3, 1e-3};
  c.taus = {0.1, 0.05};
  c.output_dir = "out dir";
  c.seed = 99;
  const auto text = print_config(c);
  const auto back = parse_config(text);
  CHECK(back == c);
  CHECK(print_config(back) == text);
  CHECK(back.model().d2 == 1e-3);
  CHECK(back.model().rho == 0.0);

  CHECK(parse_config("# comment only\n\n") == RunConfig{});
  CHECK_THROWS_AS(parse_config("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("tau = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("tau\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("kind = sideways\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("param.nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("tau = -1\n").validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/invadapt.cfg"), ConfigError);
  CHECK(parse_experiment_kind("mms-spatial") == ExperimentKind::mms_spatial);
  CHECK(to_string(ExperimentKind::mms_temporal) == "mms-temporal");
}

TEST_CASE("environment overrides") {
  RunConfig c;
  apply_env_overrides(c, {{"INVADAPT_TAU", "0.02"}, {"INVADAPT_TOL_X", "5e-4"},
                          {"INVADAPT_PARAM_D2", "0.002"}, {"PATH", "/bin"}});
  CHECK(c.tau == 0.02);
  CHECK(c.amr.tol_x == 5e-4);
  CHECK(c.model().d2 == 0.002);
  CHECK_THROWS_AS(apply_env_overrides(c, {{"INVADAPT_NOPE", "1"}}), ConfigError);
}

TEST_CASE("EOC") {
  const std::vector<ConvergenceRow> halving{{1000, 0.1, 0}, {8000, 0.05, 0}};
  auto r = compute_eoc(halving);
  REQUIRE(r.pairs.size() == 1);
  REQUIRE(r.pairs[0].has_value());
  CHECK(*r.pairs[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(*r.aggregate == doctest::Approx(1.0).epsilon(1e-14));

  r = compute_eoc({{1000, 0.1, 0}, {8000, 0.1, 0}});
  CHECK(*r.pairs[0] == 0.0);

  // ln(0.0863209/0.0047541)·3 / ln(78945/11439)
  r = compute_eoc({{11439, 0.0863209, 0}, {78945, 0.0047541, 0}});
  CHECK(*r.pairs[0] == doctest::Approx(4.502298601005675).epsilon(1e-12));

  r = compute_eoc({{100, 0.2, 0}, {800, 0.1, 0}, {6400, 0.0, 0}});
  REQUIRE(r.pairs.size() == 2);
  CHECK(r.pairs[0].has_value());
  CHECK(!r.pairs[1].has_value());
  CHECK(!r.notices.empty());

  // Three points on e = C N^{-2/3}: aggregate slope 2.
  std::vector<ConvergenceRow> rows;
  for (double n : {100.0, 900.0, 5000.0}) rows.push_back({static_cast<std::size_t>(n), 3.0 * std::pow(n, -2.0 / 3.0), 0});
  CHECK(*compute_eoc(rows).aggregate == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(compute_eoc({{10, 1.0, 0}}), InputError);

  const auto t = temporal_eoc({0.04, 0.02, 0.01}, {0.4, 0.2, 0.1});
  REQUIRE(t.size() == 2);
  CHECK(t[0] == doctest::Approx(1.0));
  CHECK(t[1] == doctest::Approx(1.0));
}

TEST_CASE("rows csv") {
  const auto d = fresh_dir("invadapt_rows_test");
  fs::create_directories(d);
  const std::vector<ConvergenceRow> rows{{27, 0.125, 0.5}, {125, 1.0 / 3, 2.25}};
  write_rows_csv((d / "rows.csv").string(), rows);
  CHECK(read_rows_csv((d / "rows.csv").string()) == rows);
  std::ifstream in(d / "rows.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "dofs,l2_error,wall_seconds");
  std::ofstream(d / "bad.csv") << "dofs,l2_error,wall_seconds\n1,x,2\n";
  CHECK_THROWS_AS(read_rows_csv((d / "bad.csv").string()), InputError);
  fs::remove_all(d);
}

TEST_CASE("emit_outputs") {
  const auto d = fresh_dir("invadapt_emit_test");
  RunConfig c = small_config();
  c.write_vtu = true;
  StudyResult r;
  emit_outputs(d.string(), c, r);
  CHECK(fs::exists(d / "manifest.json"));
  CHECK(!fs::exists(d / "rows.csv"));

  const auto mesh = std::make_shared<const SimplicialMesh>(build_structured_cube(1));
  r.rows = {{8, 0.5, 0.1}};
  r.snapshots.push_back({"cube", mesh, initial_conditions(*mesh, parameter_set(1)), {}, nullptr});
  emit_outputs(d.string(), c, r);
  const auto v = read_vtu((d / "cube.vtu").string());
  CHECK(v.points.size() == 8);
  CHECK(v.cells.size() == 6);
  CHECK(v.point_data.count("u") == 1);
  CHECK(v.cell_data.at("indicator").size() == 6);
  std::ifstream in(d / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  CHECK(m.at("kind") == "uniform");
  CHECK(m.at("rows").size() == 1);
  CHECK(m.at("provenance").get<std::string>().rfind("invadapt", 0) == 0);
  CHECK(read_rows_csv((d / "rows.csv").string()) == r.rows);
  fs::remove_all(d);
}

TEST_CASE("solution difference") {
  const auto coarse = std::make_shared<const SimplicialMesh>(build_structured_cube(2));
  const auto fine = std::make_shared<const SimplicialMesh>(build_structured_cube(4));
  const auto s = initial_conditions(*coarse, parameter_set(1));
  CHECK(solution_difference(*coarse, s, *coarse, s, true) == 0.0);
  // A constant offset of 0.5 in u on the unit cube.
  auto a = StateFields::constant(*coarse, 0.5, 0, 0);
  auto b = StateFields::constant(*fine, 0.0, 0, 0);
  CHECK(solution_difference(*coarse, a, *fine, b, false) == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(solution_difference(*fine, b, *coarse, a, false) == doctest::Approx(0.5).epsilon(1e-13));
  // Non-nested meshes fall back to sampling.
  const auto other = std::make_shared<const SimplicialMesh>(build_structured_cube(3));
  auto c = StateFields::constant(*other, 0.5, 0.5, 0);
  CHECK(solution_difference(*other, c, *fine, b, true) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
}

TEST_CASE("small studies") {
  const RunConfig c = small_config();
  const auto ref = reference_solution(c, c.reference_n);
  CHECK(!ref.from_cache);
  CHECK(solution_difference(*ref.mesh, ref.state, *ref.mesh, ref.state, false) == 0.0);

  const auto uni = run_uniform_study(c, &ref);
  REQUIRE(uni.rows.size() == 2);
  CHECK(uni.rows[0].dofs == 27);
  CHECK(uni.rows[0].l2_error > 0.0);
  CHECK(uni.rows[1].dofs == 125);
  CHECK(uni.rows[1].l2_error == 0.0);

  RunConfig a = c;
  a.kind = ExperimentKind::adaptive;
  a.ladder_tol_x = {1e6};
  a.amr.coarsening = false;
  const auto ad = run_adaptive_study(a, &ref);
  REQUIRE(ad.rows.size() == 1);
  CHECK(ad.rows[0].dofs == 27);
  CHECK(ad.rows[0].l2_error == doctest::Approx(uni.rows[0].l2_error).epsilon(1e-12));

  SUBCASE("reference cache") {
    const auto d = fresh_dir("invadapt_cache_test");
    RunConfig cc = c;
    cc.reference_cache = d.string();
    const auto first = reference_solution(cc, 2);
    const auto second = reference_solution(cc, 2);
    CHECK(!first.from_cache);
    CHECK(second.from_cache);
    CHECK(second.state.u == first.state.u);
    CHECK(second.wall_seconds == first.wall_seconds);
    fs::remove_all(d);
  }
}
