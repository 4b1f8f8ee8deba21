#include "invadapt/amr.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace invadapt {

void AmrConfig::validate() const {
  if (!(tol_x > 0.0)) throw InputError("AmrConfig: tol_x must be positive");
  if (!(bulk_theta > 0.0 && bulk_theta < 1.0)) throw InputError("AmrConfig: bulk_theta must lie in (0, 1)");
  if (!(coarsen_fraction >= 0.0 && coarsen_fraction < bulk_theta))
    throw InputError("AmrConfig: coarsen_fraction must lie in [0, bulk_theta)");
  if (max_refine_loops_per_step < 0) throw InputError("AmrConfig: max_refine_loops_per_step must be >= 0");
  if (!(h_min > 0.0)) throw InputError("AmrConfig: h_min must be positive");
}

MarkResult mark(const EstimatorReport& report, const AmrConfig& config) {
  MarkResult out;
  const auto& m = report.marking;
  const std::size_t n = m.size();
  if (n == 0) return out;
  const double total = std::accumulate(m.begin(), m.end(), 0.0);
  if (!(total > 0.0)) return out;

  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return m[a] > m[b]; });
  const double target = config.bulk_theta * total;
  double sum = 0.0;
  std::vector<char> in_refine(n, 0);
  for (Index e : order) {
    if (sum >= target) break;
    out.refine.push_back(e);
    in_refine[e] = 1;
    sum += m[e];
  }

  const double limit = config.coarsen_fraction * total / static_cast<double>(n);
  for (std::size_t e = 0; e < n; ++e)
    if (!in_refine[e] && m[e] < limit) out.coarsen.push_back(static_cast<Index>(e));
  return out;
}

double composite_h1(const P1Space& space, const StateFields& state) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double h1 = norms(space, state.field(i)).h1;
    s += h1 * h1;
  }
  return std::sqrt(s);
}

namespace {

struct Solve {
  std::shared_ptr<P1Space> space;
  StateFields prev, state;
  EstimatorReport report;
  TimeStepRecord record;
};

Solve solve_and_estimate(MeshPtr mesh, StateFields prev, const AdaptStepInput& in,
                         const ModelParams& params, const AdaptOptions& opt) {
  Solve s;
  s.space = std::make_shared<P1Space>(mesh, opt.threads);
  s.prev = std::move(prev);
  const double t_new = in.t_prev + in.tau;
  StepProblem pb{&params, in.tau, opt.source, t_new, opt.newton.mode};
  auto res = newton_solve(*s.space, s.prev, pb, opt.newton);
  res.record.n = in.step;
  s.state = std::move(res.state);
  s.record = std::move(res.record);
  EstimatorOptions eo{opt.source, t_new, opt.kappa_squared};
  s.report = estimate(*s.space, s.state, s.prev, in.tau, params, eo);
  return s;
}

}  // namespace

AdaptStepResult adapt_step(const AdaptStepInput& input, const ModelParams& params,
                           const AmrConfig& config, const AdaptOptions& options) {
  config.validate();
  params.validate();
  if (!input.mesh) throw InputError("adapt_step: no mesh");
  if (!(input.tau > 0.0)) throw InputError("adapt_step: time step must be positive");
  input.prev.check(*input.mesh);

  AdaptStepResult out;
  MeshPtr mesh = input.mesh;
  Solve cur = solve_and_estimate(mesh, input.prev, input, params, options);
  out.records.push_back(cur.record);

  const RefineOptions ropt{config.h_min};
  for (int loop = 0;; ++loop) {
    const double est = std::sqrt(std::max(0.0, cur.report.alpha + cur.report.theta));
    if (est <= config.tol_x * composite_h1(*cur.space, cur.state)) {
      out.accepted_by_criterion = true;
      break;
    }
    if (loop >= config.max_refine_loops_per_step) break;
    if (config.max_dofs > 0 && mesh->num_vertices() >= config.max_dofs) {
      out.budget_exceeded = true;
      break;
    }
    auto marked = mark(cur.report, config).refine;
    if (marked.empty()) break;
    // Shrink the marked set (keeping the largest indicators) until the refined mesh fits.
    auto refined = std::make_shared<const SimplicialMesh>(refine(*mesh, marked, ropt));
    while (config.max_dofs > 0 && refined->num_vertices() > config.max_dofs && marked.size() > 1) {
      marked.resize(marked.size() / 2);
      refined = std::make_shared<const SimplicialMesh>(refine(*mesh, marked, ropt));
    }
    if (config.max_dofs > 0 && refined->num_vertices() > config.max_dofs) {
      out.budget_exceeded = true;
      break;
    }
    if (refined->num_tets() == mesh->num_tets()) break;  // everything marked sits at h_min

    StateFields prev = input.prev_on_mesh ? input.prev_on_mesh(*refined)
                                          : transfer(build_transfer(*mesh, *refined), cur.prev);
    mesh = refined;
    cur = solve_and_estimate(mesh, std::move(prev), input, params, options);
    out.records.push_back(cur.record);
    ++out.refinements;
  }
  if (out.budget_exceeded)
    out.diagnostic = "dof budget of " + std::to_string(config.max_dofs) + " reached at step " +
                     std::to_string(input.step);

  out.solve_mesh = mesh;
  out.mesh = mesh;
  out.state = cur.state;
  if (config.coarsening) {
    const auto coarse = mark(cur.report, config).coarsen;
    if (!coarse.empty()) {
      auto cr = coarsen(*mesh, coarse);
      out.coarsen_skipped = cr.skipped;
      if (cr.mesh.num_tets() != mesh->num_tets()) {
        auto cm = std::make_shared<const SimplicialMesh>(std::move(cr.mesh));
        out.state = transfer(build_transfer(*mesh, *cm), cur.state);
        out.mesh = cm;
      }
    }
  }
  out.solve_prev = std::move(cur.prev);
  out.solve_state = std::move(cur.state);
  out.report = std::move(cur.report);
  return out;
}

AdaptiveRun run_adaptive(MeshPtr base, const ModelParams& params, const AmrConfig& config,
                         double t_final, double tau, const AdaptiveRunOptions& options) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  config.validate();
  params.validate();
  if (!base) throw InputError("run_adaptive: no base mesh");
  if (!(tau > 0.0)) throw InputError("run_adaptive: time step must be positive");
  if (!(t_final > 0.0)) throw InputError("run_adaptive: T_final must be positive");

  auto initial = options.initial ? options.initial
                                 : [&params](const SimplicialMesh& m) { return initial_conditions(m, params); };
  AdaptiveRun run;
  MeshPtr mesh = base;
  StateFields state = initial(*mesh);
  const double eps = 1e-12 * tau;
  const double tau_min = tau / 64.0;
  double t = 0.0;
  int n = 1;
  while (t < t_final - eps) {
    double step = std::min(tau, t_final - t);
    while (true) {
      const auto t0 = clock::now();
      AdaptStepInput in{mesh, state, t, step, n, n == 1 ? initial : nullptr};
      try {
        auto res = adapt_step(in, params, config, options.adapt);
        AdaptiveStepSummary s;
        s.n = n;
        s.t = t + step;
        s.tau = step;
        s.dofs = res.solve_mesh->num_vertices();
        s.tets = res.solve_mesh->num_tets();
        s.alpha = res.report.alpha;
        s.theta = res.report.theta;
        s.gamma = res.report.gamma;
        s.kappa = res.report.kappa;
        s.k_n = res.records.back().k_n;
        s.solves = static_cast<int>(res.records.size());
        s.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        s.budget_exceeded = res.budget_exceeded;
        s.coarsen_skipped = res.coarsen_skipped;
        if (options.on_step) options.on_step(res, s);
        run.steps.push_back(s);
        mesh = res.mesh;
        state = std::move(res.state);
        t = s.t;
        ++n;
        break;
      } catch (const StepFailure& f) {
        step *= 0.5;
        if (step < tau_min * (1.0 - 1e-12)) {
          run.completed = false;
          run.diagnostic = "step size fell below tau_min at t=" + std::to_string(t) + ": " + f.what();
          run.final_mesh = mesh;
          run.final_state = std::move(state);
          run.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
          return run;
        }
      }
    }
  }
  run.final_mesh = mesh;
  run.final_state = std::move(state);
  run.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return run;
}

}  // namespace invadapt
