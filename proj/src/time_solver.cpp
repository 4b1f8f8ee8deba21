#include "invadapt/time_solver.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "invadapt/estimator.hpp"
#include "invadapt/vtu.hpp"

namespace invadapt {

LinearSolveResult linear_solve(const SparseOperator& a, std::span<const double> rhs,
                               const LinearSolveOptions& options) {
  if (static_cast<Index>(rhs.size()) != a.rows()) throw InputError("linear_solve: size mismatch");
  LinearSolveResult out;
  const bool dense_ok = options.dense_fallback && a.rows() <= options.dense_limit;
  if (options.force_dense) {
    if (a.rows() > options.dense_limit) throw InputError("linear_solve: system too large for dense LU");
    out.x = dense_solve(a, rhs);
    out.dense = true;
  } else {
    std::vector<double> x0(rhs.size(), 0.0);
    auto k = bicgstab(a, rhs, x0, {options.rel_tol, options.max_iter});
    out.iterations = k.iterations;
    out.relative_residual = k.relative_residual;
    if (k.converged) {
      out.x = std::move(k.x);
      return out;
    }
    if (!dense_ok) throw LinearSolveError("BiCGSTAB " + k.failure, k.iterations, k.relative_residual);
    out.x = dense_solve(a, rhs);
    out.dense = true;
  }
  const auto r = a * out.x;
  double num = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) num += (r[i] - rhs[i]) * (r[i] - rhs[i]);
  const double bn = norm2(rhs);
  out.relative_residual = bn > 0.0 ? std::sqrt(num) / bn : std::sqrt(num);
  if (!(out.relative_residual <= std::max(options.rel_tol, 1e-10)))
    throw LinearSolveError("dense LU inaccurate", out.iterations, out.relative_residual);
  return out;
}

NewtonResult newton_solve(const P1Space& space, const StateFields& prev, const StepProblem& problem,
                          const NewtonOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  if (!(problem.tau > 0.0)) throw InputError("newton_solve: time step must be positive");
  prev.check(space.mesh());

  TimeStepRecord rec;
  rec.t_n = problem.time;
  rec.tau_n = problem.tau;
  rec.mesh_id = space.mesh().id();

  std::vector<double> x = prev.pack();
  StateFields state = prev;
  auto sys = assemble_system(space, state, prev, problem, true);
  double fnorm = norm2(sys.residual);
  const double tol = std::max(options.abs_tol, options.rel_tol * fnorm);
  rec.newton_residual_history.push_back(fnorm);
  StateFields best = state;
  double best_norm = fnorm;

  int updates = 0;
  while (fnorm > tol) {
    if (updates >= options.max_iter || !std::isfinite(fnorm)) {
      rec.k_n = updates;
      throw StepFailure("Newton did not converge at t=" + std::to_string(problem.time), best, rec);
    }
    std::vector<double> rhs(sys.residual.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = -sys.residual[i];
    LinearSolveResult lin;
    try {
      lin = linear_solve(sys.jacobian, rhs, options.linear);
    } catch (const LinearSolveError& e) {
      rec.k_n = updates;
      rec.linear_iters += e.iterations();
      throw StepFailure(std::string("linear solve failed: ") + e.what(), best, rec);
    }
    rec.linear_iters += lin.iterations;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += lin.x[i];
    ++updates;
    state = StateFields::unpack(prev.mesh_id, x);
    if (!state.finite()) {
      rec.k_n = updates;
      throw StepFailure("Newton produced non-finite values", best, rec);
    }
    sys = assemble_system(space, state, prev, problem, true);
    fnorm = norm2(sys.residual);
    rec.newton_residual_history.push_back(fnorm);
    if (fnorm < best_norm) {
      best_norm = fnorm;
      best = state;
    }
  }
  rec.k_n = std::max(1, updates);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(state), std::move(rec)};
}

Trajectory time_loop(const P1Space& space, const StateFields& initial, const ModelParams& params,
                     double t_final, double tau0, const TimeLoopOptions& options) {
  if (!(tau0 > 0.0)) throw InputError("time_loop: tau0 must be positive");
  if (!(t_final > options.t_start)) throw InputError("time_loop: T_final must exceed the start time");
  params.validate();
  initial.check(space.mesh());
  const double tau_min = options.tau_min > 0.0 ? options.tau_min : tau0 / 64.0;

  Trajectory traj;
  StateFields current = initial;
  double t = options.t_start;
  int n = options.first_step;
  const double eps = 1e-12 * tau0;
  double tau_next = tau0;
  while (t < t_final - eps) {
    double tau = tau_next;
    bool last = false;
    if (t + tau >= t_final - eps) {
      tau = t_final - t;
      last = true;
    }
    while (true) {
      StepProblem pb{&params, tau, options.source, last ? t_final : t + tau, options.newton.mode};
      std::string failure;
      try {
        auto res = newton_solve(space, current, pb, options.newton);
        if (options.temporal_control) {
          const auto ti = temporal_indicator(space, res.state, current, tau, params, {options.source, pb.time});
          const double eta_t = std::sqrt(ti.gamma + ti.kappa);
          if (eta_t > options.temporal_tol && tau * 0.5 >= tau_min * (1.0 - 1e-12)) {
            tau *= 0.5;
            last = false;
            continue;
          }
          tau_next = eta_t < 0.25 * options.temporal_tol ? std::min(tau0, 2.0 * tau) : tau;
        }
        res.record.n = n;
        current = std::move(res.state);
        t = pb.time;
        if (options.on_step) options.on_step(current, res.record);
        if (options.keep_states) traj.states.push_back(current);
        traj.records.push_back(std::move(res.record));
        ++n;
        break;
      } catch (const StepFailure& f) {
        failure = f.what();
      }
      tau *= 0.5;
      last = false;
      if (tau < tau_min * (1.0 - 1e-12)) {
        traj.completed = false;
        traj.diagnostic = "step size fell below tau_min at t=" + std::to_string(t) + ": " + failure;
        traj.final_state = current;
        return traj;
      }
    }
  }
  traj.final_state = std::move(current);
  return traj;
}

void write_checkpoint(const std::string& dir, const SimplicialMesh& mesh, const StateFields& state,
                      double time, int step) {
  state.check(mesh);
  std::filesystem::create_directories(dir);
  std::vector<double> tag, level, parent;
  for (const Tet& t : mesh.tets()) {
    tag.push_back(t.tag);
    level.push_back(t.level);
    parent.push_back(t.parent);
  }
  write_vtu(dir + "/checkpoint.vtu", mesh, {{"u", state.u}, {"v", state.v}, {"w", state.w}},
            {{"tag", tag}, {"level", level}, {"parent", parent}});
  nlohmann::json history = nlohmann::json::array();
  for (const Tet& t : mesh.history())
    history.push_back({t.v[0], t.v[1], t.v[2], t.v[3], t.tag, t.level, t.parent});
  nlohmann::json j{{"format", "invadapt-checkpoint"},
                   {"time", time},
                   {"step", step},
                   {"vertices", mesh.num_vertices()},
                   {"tets", mesh.num_tets()},
                   {"history", history}};
  std::ofstream os(dir + "/checkpoint.json");
  os << j.dump(1) << '\n';
  if (!os) throw InputError("cannot write checkpoint manifest in '" + dir + "'");
}

Checkpoint read_checkpoint(const std::string& dir) {
  std::ifstream is(dir + "/checkpoint.json");
  if (!is) throw InputError("missing checkpoint manifest in '" + dir + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  const VtuContent vtu = read_vtu(dir + "/checkpoint.vtu");
  const auto& tag = vtu.cell_data.at("tag");
  const auto& level = vtu.cell_data.at("level");
  const auto& parent = vtu.cell_data.at("parent");
  std::vector<Tet> tets(vtu.cells.size());
  for (std::size_t c = 0; c < tets.size(); ++c) {
    tets[c].v = vtu.cells[c];
    tets[c].tag = static_cast<int>(tag[c]);
    tets[c].level = static_cast<int>(level[c]);
    tets[c].parent = static_cast<Index>(parent[c]);
  }
  std::vector<Tet> history;
  for (const auto& h : j.at("history")) {
    Tet t;
    for (int k = 0; k < 4; ++k) t.v[k] = h[k].get<Index>();
    t.tag = h[4].get<int>();
    t.level = h[5].get<int>();
    t.parent = h[6].get<Index>();
    history.push_back(t);
  }
  Checkpoint cp;
  cp.mesh = std::make_shared<const SimplicialMesh>(vtu.points, std::move(tets), std::move(history));
  cp.state.mesh_id = cp.mesh->id();
  cp.state.u = vtu.point_data.at("u");
  cp.state.v = vtu.point_data.at("v");
  cp.state.w = vtu.point_data.at("w");
  cp.state.check(*cp.mesh);
  cp.time = j.at("time").get<double>();
  cp.step = j.at("step").get<int>();
  return cp;
}

}  // namespace invadapt
