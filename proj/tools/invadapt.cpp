#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "invadapt/harness.hpp"

using namespace invadapt;

namespace {

void print_rows(const std::vector<ConvergenceRow>& rows) {
  std::printf("%10s  %14s  %12s\n", "dofs", "l2_error", "wall_s");
  for (const auto& r : rows) std::printf("%10zu  %14.6e  %12.3f\n", r.dofs, r.l2_error, r.wall_seconds);
}

void print_eoc(const std::vector<ConvergenceRow>& rows) {
  const auto rep = compute_eoc(rows);
  for (std::size_t i = 0; i < rep.pairs.size(); ++i) {
    if (rep.pairs[i]) std::printf("EOC_h[%zu->%zu] = %.4f\n", i, i + 1, *rep.pairs[i]);
    else std::printf("EOC_h[%zu->%zu] = skipped\n", i, i + 1);
  }
  if (rep.aggregate) std::printf("EOC_h aggregate (least squares) = %.4f\n", *rep.aggregate);
  for (const auto& n : rep.notices) std::printf("note: %s\n", n.c_str());
}

int cmd_run(const std::string& path) {
  RunConfig config;
  try {
    config = load_config(path);
    apply_env_overrides(config, process_environment());
    config.validate();
  } catch (const InputError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  std::printf("%s\nkind: %s\n", provenance().c_str(), to_string(config.kind).c_str());
  const auto result = run_study(config);
  emit_outputs(config.output_dir, config, result);
  print_rows(result.rows);
  if (config.kind == ExperimentKind::mms_temporal) {
    const auto eoc = temporal_eoc(result.taus, result.temporal_errors);
    for (std::size_t i = 0; i < eoc.size(); ++i)
      std::printf("EOC_tau[%g->%g] = %.4f\n", result.taus[i], result.taus[i + 1], eoc[i]);
  } else if (result.rows.size() >= 2) {
    print_eoc(result.rows);
  }
  for (const auto& w : result.warnings) std::printf("warning: %s\n", w.c_str());
  std::printf("outputs written to %s\n", config.output_dir.c_str());
  return 0;
}

int cmd_eoc(const std::string& path) {
  std::vector<ConvergenceRow> rows;
  try {
    rows = read_rows_csv(path);
    if (rows.size() < 2) throw InputError(path + ": need at least 2 rows");
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  print_rows(rows);
  print_eoc(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive finite elements for a cancer-invasion reaction-diffusion-haptotaxis model"};
  app.require_subcommand(1);
  std::string config_path, csv_path;
  auto* run = app.add_subcommand("run", "Run the study described by a key = value config file");
  run->add_option("config", config_path, "Config file")->required();
  auto* eoc = app.add_subcommand("eoc", "Convergence orders from a dofs,l2_error[,wall_seconds] CSV");
  eoc->add_option("csv", csv_path, "CSV file")->required();
  auto* verify = app.add_subcommand("verify", "Run the manufactured-solution and oracle self-checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (run->parsed()) return cmd_run(config_path);
    if (eoc->parsed()) return cmd_eoc(csv_path);
    if (verify->parsed()) return run_verification(std::cout) ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
