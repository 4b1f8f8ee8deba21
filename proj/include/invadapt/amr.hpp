#pragma once

#include <functional>
#include <string>
#include <vector>

#include "invadapt/estimator.hpp"
#include "invadapt/time_solver.hpp"

namespace invadapt {

struct AmrConfig {
  double tol_x = 0.001;
  double bulk_theta = 0.5;
  double coarsen_fraction = 0.05;
  int max_refine_loops_per_step = 3;
  double h_min = kDefaultMinElementSize;
  std::size_t max_dofs = 0;  // node cap; 0 means none
  bool coarsening = true;

  void validate() const;
};

struct MarkResult {
  std::vector<Index> refine;
  std::vector<Index> coarsen;
};

// Dörfler marking: the shortest prefix of elements sorted by descending marking value
// (ties by index) whose sum reaches bulk_theta × total. Coarsening: values below
// coarsen_fraction × mean, excluding the refine set.
MarkResult mark(const EstimatorReport& report, const AmrConfig& config);

// Composite H¹ norm (Σ over u, v, w) of a state.
double composite_h1(const P1Space& space, const StateFields& state);

struct AdaptStepInput {
  MeshPtr mesh;
  StateFields prev;  // on mesh
  double t_prev = 0.0;
  double tau = 0.0;
  int step = 1;
  // When set, supplies the previous state on a refined mesh instead of transferring it
  // (used for closed-form initial data).
  std::function<StateFields(const SimplicialMesh&)> prev_on_mesh;
};

struct AdaptStepResult {
  MeshPtr mesh;            // mesh carrying `state` (after any coarsening)
  StateFields state;
  MeshPtr solve_mesh;      // mesh of the accepted solve and of `report`
  StateFields solve_prev;  // previous state on solve_mesh
  StateFields solve_state;
  EstimatorReport report;
  std::vector<TimeStepRecord> records;  // every solve, the accepted one last
  int refinements = 0;
  bool accepted_by_criterion = false;
  bool budget_exceeded = false;
  std::size_t coarsen_skipped = 0;
  std::string diagnostic;
};

struct AdaptOptions {
  NewtonOptions newton;
  SourceFn source;
  bool kappa_squared = true;
  int threads = 1;
};

// Solve, estimate and refine until (α+Θ)^{1/2} ≤ tol_x·‖state‖ or the loop budget is spent,
// then coarsen once.
AdaptStepResult adapt_step(const AdaptStepInput& input, const ModelParams& params,
                           const AmrConfig& config, const AdaptOptions& options = {});

struct AdaptiveStepSummary {
  int n = 0;
  double t = 0.0;
  double tau = 0.0;
  std::size_t dofs = 0;       // nodes of the accepted solve
  std::size_t tets = 0;
  double alpha = 0.0, theta = 0.0, gamma = 0.0, kappa = 0.0;
  int k_n = 0;                // Newton updates of the accepted solve
  int solves = 0;
  double wall_seconds = 0.0;
  bool budget_exceeded = false;
  std::size_t coarsen_skipped = 0;
};

struct AdaptiveRun {
  std::vector<AdaptiveStepSummary> steps;
  MeshPtr final_mesh;
  StateFields final_state;
  double wall_seconds = 0.0;
  bool completed = true;
  std::string diagnostic;
};

struct AdaptiveRunOptions {
  AdaptOptions adapt;
  // Initial data on an arbitrary mesh; also used on meshes refined during the first step.
  std::function<StateFields(const SimplicialMesh&)> initial;
  std::function<void(const AdaptStepResult&, const AdaptiveStepSummary&)> on_step;
};

AdaptiveRun run_adaptive(MeshPtr base, const ModelParams& params, const AmrConfig& config,
                         double t_final, double tau, const AdaptiveRunOptions& options);

}  // namespace invadapt
