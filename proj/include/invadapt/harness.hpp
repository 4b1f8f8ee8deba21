#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "invadapt/amr.hpp"

namespace invadapt {

enum class ExperimentKind { uniform, adaptive, mms_spatial, mms_temporal };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& s);

// Flat `key = value` run description. Lists are comma separated.
struct RunConfig {
  ExperimentKind kind = ExperimentKind::uniform;
  int parameter_set = 1;
  std::map<std::string, double> param_overrides;  // keys: d1 d2 chi lambda rho eta alpha beta eps_ic
  int base_n = 8;
  std::vector<int> levels{4, 8, 16};  // structured n per uniform level
  int reference_n = 32;               // 0: the finest level is the reference
  double tau = 0.01;
  double t_final = 1.0;
  AmrConfig amr;
  std::vector<double> ladder_tol_x;         // adaptive rungs by tolerance
  std::vector<std::size_t> ladder_max_dofs;  // or by node cap
  std::vector<double> taus{0.04, 0.02, 0.01};  // mms-temporal
  std::string mms_case = "A";
  bool composite_error = false;  // three-field L² norm instead of u only
  bool kappa_squared = true;
  std::string output_dir = "invadapt-out";
  std::string reference_cache;  // directory for cached reference solutions; empty disables
  bool write_vtu = true;
  int snapshot_every = 0;  // adaptive runs: also snapshot every k-th step; 0 keeps the final step only
  int threads = 1;
  std::uint64_t seed = 1;

  ModelParams model() const;
  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&);
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

// Parses `key = value` lines; `#` starts a comment. Throws ConfigError on unknown keys
// or malformed values.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Every key, one per line, in a fixed order; parse_config(print_config(c)) == c.
std::string print_config(const RunConfig& config);
// Applies INVADAPT_<KEY> variables (key upper-cased, '.' as '_'), e.g. INVADAPT_TAU=0.02.
void apply_env_overrides(RunConfig& config, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();

struct ConvergenceRow {
  std::size_t dofs = 0;
  double l2_error = 0.0;
  double wall_seconds = 0.0;
  friend bool operator==(const ConvergenceRow&, const ConvergenceRow&) = default;
};

void write_rows_csv(const std::string& path, const std::vector<ConvergenceRow>& rows);
std::vector<ConvergenceRow> read_rows_csv(const std::string& path);

struct EocReport {
  std::vector<std::optional<double>> pairs;  // empty entry: pair skipped (zero error)
  std::optional<double> aggregate;           // least-squares slope of ln e against ln N^{-1/3}
  std::vector<std::string> notices;
};

// EOC_h = 3 ln(e_i/e_{i+1}) / ln(N_{i+1}/N_i) for consecutive rows, plus the aggregate slope.
EocReport compute_eoc(const std::vector<ConvergenceRow>& rows);

// Order in τ from errors at step sizes taus[i].
std::vector<double> temporal_eoc(const std::vector<double>& taus, const std::vector<double>& errors);

struct ReferenceSolution {
  MeshPtr mesh;
  StateFields state;
  double wall_seconds = 0.0;
  bool from_cache = false;
};

// Uniform structured-n solve to t_final; reads or fills config.reference_cache when set.
ReferenceSolution reference_solution(const RunConfig& config, int n);

// ‖a − b‖_{L²}: u only, or the three-field norm. Exact when one mesh is nested in the
// other; otherwise sampled with the degree-5 rule on the finer mesh.
double solution_difference(const SimplicialMesh& mesh_a, const StateFields& a,
                           const SimplicialMesh& mesh_b, const StateFields& b, bool composite);

// One uniform manufactured-solution trajectory with the reliability bookkeeping.
struct EffectivityLevel {
  int n = 0;
  std::size_t dofs = 0;
  double u_l2_error = 0.0;  // ‖u_h − u*‖_{L²} at t_final
  double estimator = 0.0;   // (initial + Σ τ(α+Θ) + Σ(γ+κ))^{1/2}
  double error = 0.0;       // (Σ_fields max_n ‖e‖²_{L²} + Σ_n τ_n ‖e‖²_{H¹})^{1/2}
  double index = 0.0;       // estimator / error
  double wall_seconds = 0.0;
};

EffectivityLevel mms_effectivity(const ManufacturedCase& mc, int n, double tau, double t_final,
                                 bool kappa_squared = true, int threads = 1);

struct Snapshot {
  std::string name;
  MeshPtr mesh;
  StateFields state;
  std::vector<double> indicator;  // per tet; empty writes zeros
  std::shared_ptr<const EstimatorReport> report;  // written as <name>_estimator.csv when set
};

struct StudyResult {
  std::vector<ConvergenceRow> rows;
  std::vector<Snapshot> snapshots;
  std::map<std::string, double> phase_seconds;
  std::vector<std::string> warnings;
  std::vector<double> taus;            // mms-temporal only
  std::vector<double> temporal_errors;  // ‖u_τi − u_τ(i+1)‖ at t_final
  std::vector<AdaptiveRun> adaptive_runs;
};

// Uniform levels against the reference level (or the exact solution in mms-spatial mode).
// The reference row is included with zero error. Rows sorted by dofs.
StudyResult run_uniform_study(const RunConfig& config,
                              const ReferenceSolution* reference = nullptr);
// One row per ladder rung, measured against the same reference as the uniform study.
StudyResult run_adaptive_study(const RunConfig& config,
                               const ReferenceSolution* reference = nullptr);
// Self-convergence in τ on the base_n mesh.
StudyResult run_temporal_study(const RunConfig& config);
StudyResult run_study(const RunConfig& config);

// Version and source revision of this build.
std::string provenance();

// Writes <dir>/manifest.json, <dir>/rows.csv (if any rows) and one VTU per snapshot.
void emit_outputs(const std::string& dir, const RunConfig& config, const StudyResult& result);

// Fast self-check suite: mesh counts, manufactured convergence, Jacobian, zero estimator.
// One line per check; returns true when all pass.
bool run_verification(std::ostream& os);

}  // namespace invadapt
