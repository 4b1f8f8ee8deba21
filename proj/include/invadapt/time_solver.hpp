#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "invadapt/fem.hpp"
#include "invadapt/linalg.hpp"

namespace invadapt {

struct LinearSolveOptions {
  double rel_tol = 1e-10;
  int max_iter = 4000;
  // Use the dense LU when BiCGSTAB fails and the dimension is at most dense_limit.
  bool dense_fallback = true;
  Index dense_limit = 3000;
  bool force_dense = false;
};

class LinearSolveError : public Error {
 public:
  LinearSolveError(const std::string& what, int iterations, double last_residual)
      : Error(what + " after " + std::to_string(iterations) + " iterations, relative residual " +
              std::to_string(last_residual)),
        iterations_(iterations),
        last_residual_(last_residual) {}
  int iterations() const { return iterations_; }
  double last_residual() const { return last_residual_; }

 private:
  int iterations_;
  double last_residual_;
};

struct LinearSolveResult {
  std::vector<double> x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool dense = false;
};

// BiCGSTAB with Jacobi preconditioning; throws LinearSolveError on breakdown or stagnation.
LinearSolveResult linear_solve(const SparseOperator& a, std::span<const double> rhs,
                               const LinearSolveOptions& options = {});

struct NewtonOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  int max_iter = 20;
  JacobianMode mode = JacobianMode::analytic;
  LinearSolveOptions linear;
};

struct TimeStepRecord {
  int n = 0;
  double t_n = 0.0;
  double tau_n = 0.0;
  int k_n = 0;
  std::vector<double> newton_residual_history;  // ‖F‖ before each update, then the final value
  int linear_iters = 0;
  std::uint64_t mesh_id = 0;
  double wall_seconds = 0.0;
};

// Newton did not converge; carries the iterate with the smallest residual.
class StepFailure : public Error {
 public:
  StepFailure(const std::string& what, StateFields best, TimeStepRecord record)
      : Error(what), best_(std::move(best)), record_(std::move(record)) {}
  const StateFields& best() const { return best_; }
  const TimeStepRecord& record() const { return record_; }

 private:
  StateFields best_;
  TimeStepRecord record_;
};

struct NewtonResult {
  StateFields state;
  TimeStepRecord record;
};

// One backward Euler step from prev at time t_new = problem.time.
NewtonResult newton_solve(const P1Space& space, const StateFields& prev, const StepProblem& problem,
                          const NewtonOptions& options = {});

struct TimeLoopOptions {
  double t_start = 0.0;
  int first_step = 1;
  double tau_min = 0.0;  // 0 selects τ₀/2⁶
  NewtonOptions newton;
  SourceFn source;
  bool keep_states = true;
  std::function<void(const StateFields&, const TimeStepRecord&)> on_step;
  // Opt-in step control by the temporal indicator: a step with (γ+κ)^{1/2} > temporal_tol is
  // redone with τ/2; below temporal_tol/4 the next τ doubles, capped at τ₀.
  bool temporal_control = false;
  double temporal_tol = 1e-3;
};

struct Trajectory {
  std::vector<StateFields> states;  // after each accepted step (if kept)
  std::vector<TimeStepRecord> records;
  StateFields final_state;
  bool completed = true;
  std::string diagnostic;
};

// Fixed-step backward Euler on one mesh. A failed step is retried with τ/2 down to τ_min;
// below that the loop stops and returns the partial trajectory with a diagnostic.
Trajectory time_loop(const P1Space& space, const StateFields& initial, const ModelParams& params,
                     double t_final, double tau0, const TimeLoopOptions& options = {});

struct Checkpoint {
  MeshPtr mesh;
  StateFields state;
  double time = 0.0;
  int step = 0;
};

// Writes <dir>/checkpoint.vtu and <dir>/checkpoint.json.
void write_checkpoint(const std::string& dir, const SimplicialMesh& mesh, const StateFields& state,
                      double time, int step);
Checkpoint read_checkpoint(const std::string& dir);

}  // namespace invadapt
