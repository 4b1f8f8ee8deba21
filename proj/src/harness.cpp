#include "invadapt/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "json.hpp"

#include "invadapt/vtu.hpp"

extern char** environ;

#ifndef INVADAPT_GIT_REV
#define INVADAPT_GIT_REV "unknown"
#endif

namespace invadapt {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double to_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  }
}

long long to_integer(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  }
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

const std::vector<std::string> kParamKeys{"d1", "d2", "chi", "lambda", "rho", "eta", "alpha", "beta", "eps_ic"};

struct KeyHandler {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> h = [] {
    std::vector<KeyHandler> v;
    auto num = [&](std::string k, double RunConfig::*m) {
      v.push_back({k, [k, m](RunConfig& c, const std::string& s) { c.*m = to_double(k, s); },
                   [m](const RunConfig& c) { return fmt_double(c.*m); }});
    };
    auto amr_num = [&](std::string k, double AmrConfig::*m) {
      v.push_back({k, [k, m](RunConfig& c, const std::string& s) { c.amr.*m = to_double(k, s); },
                   [m](const RunConfig& c) { return fmt_double(c.amr.*m); }});
    };
    auto integer = [&](std::string k, int RunConfig::*m) {
      v.push_back({k, [k, m](RunConfig& c, const std::string& s) { c.*m = static_cast<int>(to_integer(k, s)); },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    auto flag = [&](std::string k, bool RunConfig::*m) {
      v.push_back({k, [k, m](RunConfig& c, const std::string& s) { c.*m = to_bool(k, s); },
                   [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }});
    };
    auto text = [&](std::string k, std::string RunConfig::*m) {
      v.push_back({k, [m](RunConfig& c, const std::string& s) { c.*m = s; },
                   [m](const RunConfig& c) { return c.*m; }});
    };
    v.push_back({"kind", [](RunConfig& c, const std::string& s) { c.kind = parse_experiment_kind(s); },
                 [](const RunConfig& c) { return to_string(c.kind); }});
    integer("parameter_set", &RunConfig::parameter_set);
    integer("base_n", &RunConfig::base_n);
    v.push_back({"levels",
                 [](RunConfig& c, const std::string& s) {
                   c.levels.clear();
                   for (const auto& x : split_list(s)) c.levels.push_back(static_cast<int>(to_integer("levels", x)));
                 },
                 [](const RunConfig& c) { return join(c.levels, [](int x) { return std::to_string(x); }); }});
    integer("reference_n", &RunConfig::reference_n);
    num("tau", &RunConfig::tau);
    num("t_final", &RunConfig::t_final);
    amr_num("tol_x", &AmrConfig::tol_x);
    amr_num("bulk_theta", &AmrConfig::bulk_theta);
    amr_num("coarsen_fraction", &AmrConfig::coarsen_fraction);
    v.push_back({"max_refine_loops_per_step",
                 [](RunConfig& c, const std::string& s) {
                   c.amr.max_refine_loops_per_step = static_cast<int>(to_integer("max_refine_loops_per_step", s));
                 },
                 [](const RunConfig& c) { return std::to_string(c.amr.max_refine_loops_per_step); }});
    amr_num("h_min", &AmrConfig::h_min);
    v.push_back({"max_dofs",
                 [](RunConfig& c, const std::string& s) {
                   const auto x = to_integer("max_dofs", s);
                   if (x < 0) throw ConfigError("config key 'max_dofs': must be >= 0");
                   c.amr.max_dofs = static_cast<std::size_t>(x);
                 },
                 [](const RunConfig& c) { return std::to_string(c.amr.max_dofs); }});
    v.push_back({"coarsening", [](RunConfig& c, const std::string& s) { c.amr.coarsening = to_bool("coarsening", s); },
                 [](const RunConfig& c) { return std::string(c.amr.coarsening ? "true" : "false"); }});
    v.push_back({"ladder_tol_x",
                 [](RunConfig& c, const std::string& s) {
                   c.ladder_tol_x.clear();
                   for (const auto& x : split_list(s)) c.ladder_tol_x.push_back(to_double("ladder_tol_x", x));
                 },
                 [](const RunConfig& c) { return join(c.ladder_tol_x, fmt_double); }});
    v.push_back({"ladder_max_dofs",
                 [](RunConfig& c, const std::string& s) {
                   c.ladder_max_dofs.clear();
                   for (const auto& x : split_list(s)) {
                     const auto d = to_integer("ladder_max_dofs", x);
                     if (d <= 0) throw ConfigError("config key 'ladder_max_dofs': caps must be positive");
                     c.ladder_max_dofs.push_back(static_cast<std::size_t>(d));
                   }
                 },
                 [](const RunConfig& c) {
                   return join(c.ladder_max_dofs, [](std::size_t x) { return std::to_string(x); });
                 }});
    v.push_back({"taus",
                 [](RunConfig& c, const std::string& s) {
                   c.taus.clear();
                   for (const auto& x : split_list(s)) c.taus.push_back(to_double("taus", x));
                 },
                 [](const RunConfig& c) { return join(c.taus, fmt_double); }});
    text("mms_case", &RunConfig::mms_case);
    flag("composite_error", &RunConfig::composite_error);
    flag("kappa_squared", &RunConfig::kappa_squared);
    text("output_dir", &RunConfig::output_dir);
    text("reference_cache", &RunConfig::reference_cache);
    flag("write_vtu", &RunConfig::write_vtu);
    integer("snapshot_every", &RunConfig::snapshot_every);
    integer("threads", &RunConfig::threads);
    v.push_back({"seed", [](RunConfig& c, const std::string& s) { c.seed = static_cast<std::uint64_t>(to_integer("seed", s)); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    return v;
  }();
  return h;
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  if (key.rfind("param.", 0) == 0) {
    const std::string name = key.substr(6);
    if (std::find(kParamKeys.begin(), kParamKeys.end(), name) == kParamKeys.end())
      throw ConfigError("unknown config key '" + key + "'");
    c.param_overrides[name] = to_double(key, value);
    return;
  }
  for (const auto& h : handlers())
    if (h.key == key) {
      h.set(c, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

bool is_mms(ExperimentKind k) { return k == ExperimentKind::mms_spatial || k == ExperimentKind::mms_temporal; }

// Initial state and source of the configured problem on a mesh.
struct Problem {
  ModelParams params;
  std::optional<ManufacturedCase> mms;

  StateFields initial(const SimplicialMesh& mesh) const {
    return mms ? mms->interpolate(mesh, 0.0) : initial_conditions(mesh, params);
  }
  SourceFn source() const { return mms ? mms->source_fn() : SourceFn{}; }
};

Problem make_problem(const RunConfig& c) {
  Problem p{c.model(), std::nullopt};
  if (is_mms(c.kind)) p.mms = manufactured_case(c.mms_case, p.params);
  return p;
}

struct UniformSolve {
  MeshPtr mesh;
  StateFields state, prev;
  double last_tau = 0.0;
  double wall = 0.0;
};

UniformSolve solve_uniform(const RunConfig& c, const Problem& pb, int n) {
  const auto t0 = clock_type::now();
  UniformSolve out;
  out.mesh = std::make_shared<const SimplicialMesh>(build_structured_cube(n));
  P1Space space(out.mesh, c.threads);
  TimeLoopOptions opt;
  opt.keep_states = false;
  opt.source = pb.source();
  StateFields last;
  opt.on_step = [&](const StateFields& s, const TimeStepRecord& rec) {
    out.prev = std::move(last);
    last = s;
    out.last_tau = rec.tau_n;
  };
  auto traj = time_loop(space, pb.initial(*out.mesh), pb.params, c.t_final, c.tau, opt);
  if (!traj.completed) throw Error("uniform solve on n=" + std::to_string(n) + " failed: " + traj.diagnostic);
  out.state = std::move(traj.final_state);
  if (out.prev.size() == 0) out.prev = pb.initial(*out.mesh);
  out.wall = seconds_since(t0);
  return out;
}

double p1_l2_sq(const SimplicialMesh& mesh, std::span<const double> d) {
  double s = 0.0;
  for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
    const auto& v = mesh.tets()[t].v;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < 4; ++i) {
      sum += d[v[i]];
      sq += d[v[i]] * d[v[i]];
    }
    s += mesh.tet_volume(static_cast<Index>(t)) / 20.0 * (sq + sum * sum);
  }
  return s;
}

std::shared_ptr<const EstimatorReport> final_report(const P1Space& space, const UniformSolve& s, const Problem& pb,
                                                    double t, bool kappa_squared) {
  EstimatorOptions eo{pb.source(), t, kappa_squared};
  return std::make_shared<const EstimatorReport>(estimate(space, s.state, s.prev, s.last_tau, pb.params, eo));
}

std::string cache_key(const RunConfig& c, int n) {
  std::string k = "set=" + std::to_string(c.parameter_set) + ";n=" + std::to_string(n) + ";tau=" +
                  fmt_double(c.tau) + ";T=" + fmt_double(c.t_final);
  if (is_mms(c.kind)) k += ";mms=" + c.mms_case;
  for (const auto& [name, x] : c.param_overrides) k += ";" + name + "=" + fmt_double(x);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::hash<std::string>{}(k)));
  return std::string("ref_n") + std::to_string(n) + "_" + buf;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::uniform: return "uniform";
    case ExperimentKind::adaptive: return "adaptive";
    case ExperimentKind::mms_spatial: return "mms-spatial";
    case ExperimentKind::mms_temporal: return "mms-temporal";
  }
  return "uniform";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "uniform") return ExperimentKind::uniform;
  if (s == "adaptive") return ExperimentKind::adaptive;
  if (s == "mms-spatial") return ExperimentKind::mms_spatial;
  if (s == "mms-temporal") return ExperimentKind::mms_temporal;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

ModelParams RunConfig::model() const {
  ModelParams p = is_mms(kind) ? manufactured_parameters() : invadapt::parameter_set(parameter_set);
  for (const auto& [name, x] : param_overrides) {
    if (name == "d1") p.d1 = DiffusionCoefficient::constant(x);
    else if (name == "d2") p.d2 = x;
    else if (name == "chi") p.chi = SensitivityCoefficient::constant(x);
    else if (name == "lambda") p.lambda = x;
    else if (name == "rho") p.rho = x;
    else if (name == "eta") p.eta = x;
    else if (name == "alpha") p.alpha = x;
    else if (name == "beta") p.beta = x;
    else if (name == "eps_ic") p.eps_ic = x;
    else throw ConfigError("unknown parameter '" + name + "'");
  }
  return p;
}

void RunConfig::validate() const {
  if (!is_mms(kind) && parameter_set != 1 && parameter_set != 2)
    throw ConfigError("parameter_set must be 1 or 2");
  if (base_n < 1) throw ConfigError("base_n must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(t_final > 0.0)) throw ConfigError("t_final must be positive");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (snapshot_every < 0) throw ConfigError("snapshot_every must be >= 0");
  if (reference_n < 0) throw ConfigError("reference_n must be >= 0");
  for (int n : levels)
    if (n < 1) throw ConfigError("levels must be >= 1");
  try {
    amr.validate();
    model().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  for (double t : ladder_tol_x)
    if (!(t > 0.0)) throw ConfigError("ladder_tol_x entries must be positive");
  switch (kind) {
    case ExperimentKind::uniform: {
      const std::size_t count = levels.size() + (reference_n > 0 ? 1 : 0);
      if (count < 2) throw ConfigError("a uniform study needs at least 2 levels");
      break;
    }
    case ExperimentKind::mms_spatial:
      if (levels.size() < 2) throw ConfigError("an mms-spatial study needs at least 2 levels");
      break;
    case ExperimentKind::mms_temporal:
      if (taus.size() < 3) throw ConfigError("an mms-temporal study needs at least 3 step sizes");
      for (double t : taus)
        if (!(t > 0.0)) throw ConfigError("taus entries must be positive");
      break;
    case ExperimentKind::adaptive:
      if (reference_n < 1 && levels.empty()) throw ConfigError("an adaptive study needs a reference level");
      break;
  }
  if (is_mms(kind)) {
    try {
      manufactured_case(mms_case, model());
    } catch (const InputError& e) {
      throw ConfigError(e.what());
    }
  }
}

bool operator==(const RunConfig& a, const RunConfig& b) { return print_config(a) == print_config(b); }

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    set_key(c, key, trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string print_config(const RunConfig& c) {
  std::string out;
  for (const auto& h : handlers()) out += h.key + " = " + h.get(c) + "\n";
  for (const auto& [name, x] : c.param_overrides) out += "param." + name + " = " + fmt_double(x) + "\n";
  return out;
}

void apply_env_overrides(RunConfig& c, const std::map<std::string, std::string>& env) {
  auto env_name = [](std::string key) {
    for (char& ch : key) ch = ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return "INVADAPT_" + key;
  };
  std::map<std::string, std::string> known;
  for (const auto& h : handlers()) known[env_name(h.key)] = h.key;
  for (const auto& p : kParamKeys) known[env_name("param." + p)] = "param." + p;
  for (const auto& [name, value] : env) {
    if (name.rfind("INVADAPT_", 0) != 0) continue;
    auto it = known.find(name);
    if (it == known.end()) throw ConfigError("unknown environment override '" + name + "'");
    set_key(c, it->second, trim(value));
  }
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string s(*e);
    const auto eq = s.find('=');
    if (eq != std::string::npos) env[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return env;
}

void write_rows_csv(const std::string& path, const std::vector<ConvergenceRow>& rows) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write '" + path + "'");
  os << "dofs,l2_error,wall_seconds\n";
  for (const auto& r : rows) os << r.dofs << ',' << fmt_double(r.l2_error) << ',' << fmt_double(r.wall_seconds) << '\n';
  if (!os) throw InputError("write failed for '" + path + "'");
}

std::vector<ConvergenceRow> read_rows_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read '" + path + "'");
  std::vector<ConvergenceRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || (lineno == 1 && line.rfind("dofs", 0) == 0)) continue;
    const auto cols = split_list(line);
    if (cols.size() < 2) throw InputError(path + ":" + std::to_string(lineno) + ": expected dofs,l2_error[,wall_seconds]");
    ConvergenceRow r;
    try {
      const long long d = to_integer("dofs", cols[0]);
      if (d <= 0) throw InputError("");
      r.dofs = static_cast<std::size_t>(d);
      r.l2_error = to_double("l2_error", cols[1]);
      if (cols.size() > 2) r.wall_seconds = to_double("wall_seconds", cols[2]);
    } catch (const InputError&) {
      throw InputError(path + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
    }
    if (!(r.l2_error >= 0.0)) throw InputError(path + ":" + std::to_string(lineno) + ": negative error");
    rows.push_back(r);
  }
  return rows;
}

EocReport compute_eoc(const std::vector<ConvergenceRow>& rows) {
  if (rows.size() < 2) throw InputError("compute_eoc: need at least 2 rows");
  EocReport rep;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = rows[i + 1];
    if (!(a.l2_error > 0.0) || !(b.l2_error > 0.0)) {
      rep.pairs.push_back(std::nullopt);
      rep.notices.push_back("pair " + std::to_string(i) + " skipped: zero error");
      continue;
    }
    if (a.dofs == b.dofs) {
      rep.pairs.push_back(std::nullopt);
      rep.notices.push_back("pair " + std::to_string(i) + " skipped: equal dofs");
      continue;
    }
    rep.pairs.push_back(3.0 * std::log(a.l2_error / b.l2_error) /
                        std::log(static_cast<double>(b.dofs) / static_cast<double>(a.dofs)));
  }
  std::vector<double> xs, ys;
  for (const auto& r : rows)
    if (r.l2_error > 0.0) {
      xs.push_back(-std::log(static_cast<double>(r.dofs)) / 3.0);
      ys.push_back(std::log(r.l2_error));
    }
  if (xs.size() >= 2) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx > 0.0) rep.aggregate = sxy / sxx;
  }
  if (!rep.aggregate) rep.notices.push_back("aggregate skipped: fewer than 2 usable rows");
  return rep;
}

std::vector<double> temporal_eoc(const std::vector<double>& taus, const std::vector<double>& errors) {
  if (taus.size() != errors.size() || taus.size() < 2) throw InputError("temporal_eoc: need matching lists of >= 2");
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < taus.size(); ++i)
    out.push_back(std::log(errors[i] / errors[i + 1]) / std::log(taus[i] / taus[i + 1]));
  return out;
}

ReferenceSolution reference_solution(const RunConfig& config, int n) {
  ReferenceSolution ref;
  std::string dir;
  if (!config.reference_cache.empty()) {
    dir = config.reference_cache + "/" + cache_key(config, n);
    if (std::filesystem::exists(dir + "/checkpoint.json")) {
      auto cp = read_checkpoint(dir);
      if (std::abs(cp.time - config.t_final) <= 1e-12 * std::max(1.0, config.t_final) &&
          cp.mesh->num_tets() == 6u * static_cast<std::size_t>(n) * n * n) {
        ref.mesh = cp.mesh;
        ref.state = std::move(cp.state);
        ref.from_cache = true;
        // Wall time of the original solve, so cached references still carry their cost.
        std::ifstream wall(dir + "/wall_seconds");
        if (!(wall >> ref.wall_seconds)) ref.wall_seconds = 0.0;
        return ref;
      }
    }
  }
  auto s = solve_uniform(config, make_problem(config), n);
  ref.mesh = s.mesh;
  ref.state = std::move(s.state);
  ref.wall_seconds = s.wall;
  if (!dir.empty()) {
    write_checkpoint(dir, *ref.mesh, ref.state, config.t_final, 0);
    std::ofstream wall(dir + "/wall_seconds");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g\n", ref.wall_seconds);
    wall << buf;
  }
  return ref;
}

EffectivityLevel mms_effectivity(const ManufacturedCase& mc, int n, double tau, double t_final,
                                 bool kappa_squared, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto mesh = std::make_shared<const SimplicialMesh>(build_structured_cube(n));
  const P1Space space(mesh, threads);
  EffectivityLevel out;
  out.n = n;
  out.dofs = mesh->num_vertices();

  auto field_errors = [&](const StateFields& s, double t) {
    std::array<Norms, 3> e;
    for (int a = 0; a < 3; ++a)
      e[a] = error_norms(
          space, s.field(a), [&](const Vec3& x) { return mc.exact(x, t)[a]; },
          [&](const Vec3& x) { return mc.exact_gradient(x, t)[a]; });
    return e;
  };

  const StateFields s0 = mc.interpolate(*mesh, 0.0);
  EstimatorTotals totals;
  std::array<double, 3> max_l2{}, h1_sum{};
  const auto e0 = field_errors(s0, 0.0);
  for (int a = 0; a < 3; ++a) {
    totals.initial += e0[a].l2 * e0[a].l2;
    max_l2[a] = e0[a].l2 * e0[a].l2;
  }

  StateFields prev = s0;
  TimeLoopOptions opts;
  opts.source = mc.source_fn();
  opts.keep_states = false;
  opts.on_step = [&](const StateFields& s, const TimeStepRecord& rec) {
    EstimatorOptions eo;
    eo.source = mc.source_fn();
    eo.time = rec.t_n;
    eo.kappa_squared = kappa_squared;
    totals.add_step(estimate(space, s, prev, rec.tau_n, mc.params, eo), rec.tau_n);
    const auto e = field_errors(s, rec.t_n);
    for (int a = 0; a < 3; ++a) {
      max_l2[a] = std::max(max_l2[a], e[a].l2 * e[a].l2);
      h1_sum[a] += rec.tau_n * e[a].h1 * e[a].h1;
    }
    out.u_l2_error = e[0].l2;
    prev = s;
  };
  const auto tr = time_loop(space, s0, mc.params, t_final, tau, opts);
  if (!tr.completed) throw Error("mms_effectivity: " + tr.diagnostic);

  double err2 = 0.0;
  for (int a = 0; a < 3; ++a) err2 += max_l2[a] + h1_sum[a];
  out.error = std::sqrt(err2);
  out.estimator = std::sqrt(totals.total());
  out.index = effectivity(totals, out.error);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double solution_difference(const SimplicialMesh& mesh_a, const StateFields& a,
                           const SimplicialMesh& mesh_b, const StateFields& b, bool composite) {
  a.check(mesh_a);
  b.check(mesh_b);
  const bool a_fine = mesh_a.num_tets() >= mesh_b.num_tets();
  const SimplicialMesh& fine = a_fine ? mesh_a : mesh_b;
  const SimplicialMesh& coarse = a_fine ? mesh_b : mesh_a;
  const StateFields& sf = a_fine ? a : b;
  const StateFields& sc = a_fine ? b : a;
  const int nf = composite ? 3 : 1;
  double total = 0.0;
  try {
    const auto map = build_transfer(coarse, fine);
    for (int i = 0; i < nf; ++i) {
      auto d = map.apply(sc.field(i));
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = sf.field(i)[k] - d[k];
      total += p1_l2_sq(fine, d);
    }
  } catch (const NotNestedError&) {
    // Meshes cross: sample both fields with the degree-5 rule on the finer mesh.
    const PointLocator loc(coarse);
    const auto& rule = tet_rule(5);
    for (std::size_t t = 0; t < fine.num_tets(); ++t) {
      const auto pts = fine.tet_points(static_cast<Index>(t));
      const auto& v = fine.tets()[t].v;
      const double vol = fine.tet_volume(static_cast<Index>(t));
      for (std::size_t q = 0; q < rule.points.size(); ++q) {
        const auto& bary = rule.points[q];
        Vec3 x;
        for (int j = 0; j < 4; ++j) x += bary[j] * pts[j];
        for (int i = 0; i < nf; ++i) {
          double fv = 0.0;
          for (int j = 0; j < 4; ++j) fv += bary[j] * sf.field(i)[v[j]];
          const double diff = fv - evaluate_p1(coarse, loc, sc.field(i), x);
          total += rule.weights[q] * vol * diff * diff;
        }
      }
    }
  }
  return std::sqrt(total);
}

StudyResult run_uniform_study(const RunConfig& config, const ReferenceSolution* reference) {
  config.validate();
  StudyResult res;
  const Problem pb = make_problem(config);
  const bool mms = config.kind == ExperimentKind::mms_spatial;

  std::vector<int> levels = config.levels;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  int ref_n = 0;
  if (!mms) {
    ref_n = config.reference_n > 0 ? config.reference_n : levels.back();
    std::erase(levels, ref_n);
  }

  ReferenceSolution own;
  if (!mms && !reference) {
    const auto t0 = clock_type::now();
    own = reference_solution(config, ref_n);
    res.phase_seconds["reference"] = seconds_since(t0);
    reference = &own;
  }

  const auto t0 = clock_type::now();
  for (int n : levels) {
    auto s = solve_uniform(config, pb, n);
    ConvergenceRow row{s.mesh->num_vertices(), 0.0, s.wall};
    if (mms) {
      P1Space space(s.mesh, config.threads);
      double sq = 0.0;
      for (int i = 0; i < (config.composite_error ? 3 : 1); ++i) {
        const auto e = error_norms(
            space, s.state.field(i), [&](const Vec3& x) { return pb.mms->exact(x, config.t_final)[i]; },
            [&](const Vec3& x) { return pb.mms->exact_gradient(x, config.t_final)[i]; });
        sq += e.l2 * e.l2;
      }
      row.l2_error = std::sqrt(sq);
    } else {
      row.l2_error = solution_difference(*s.mesh, s.state, *reference->mesh, reference->state, config.composite_error);
    }
    res.rows.push_back(row);
    if (config.write_vtu) {
      P1Space space(s.mesh, config.threads);
      auto rep = final_report(space, s, pb, config.t_final, config.kappa_squared);
      res.snapshots.push_back({"uniform_n" + std::to_string(n), s.mesh, s.state, rep->marking, rep});
    }
  }
  if (!mms) {
    res.rows.push_back({reference->mesh->num_vertices(),
                        solution_difference(*reference->mesh, reference->state, *reference->mesh,
                                            reference->state, config.composite_error),
                        reference->wall_seconds});
  }
  res.phase_seconds["levels"] = seconds_since(t0);
  std::stable_sort(res.rows.begin(), res.rows.end(),
                   [](const ConvergenceRow& a, const ConvergenceRow& b) { return a.dofs < b.dofs; });
  for (std::size_t i = 0; i + 1 < res.rows.size(); ++i)
    if (!(res.rows[i + 1].l2_error < res.rows[i].l2_error))
      res.warnings.push_back("errors not strictly decreasing between " + std::to_string(res.rows[i].dofs) +
                             " and " + std::to_string(res.rows[i + 1].dofs) + " dofs");
  return res;
}

StudyResult run_adaptive_study(const RunConfig& config, const ReferenceSolution* reference) {
  config.validate();
  StudyResult res;
  const Problem pb = make_problem(config);
  const bool mms = is_mms(config.kind);

  ReferenceSolution own;
  if (!mms && !reference) {
    const int ref_n = config.reference_n > 0 ? config.reference_n
                                              : *std::max_element(config.levels.begin(), config.levels.end());
    const auto t0 = clock_type::now();
    own = reference_solution(config, ref_n);
    res.phase_seconds["reference"] = seconds_since(t0);
    reference = &own;
  }

  std::vector<AmrConfig> rungs;
  for (double tol : config.ladder_tol_x) {
    rungs.push_back(config.amr);
    rungs.back().tol_x = tol;
  }
  for (std::size_t cap : config.ladder_max_dofs) {
    rungs.push_back(config.amr);
    rungs.back().max_dofs = cap;
  }
  if (rungs.empty()) rungs.push_back(config.amr);

  const auto t0 = clock_type::now();
  auto base = std::make_shared<const SimplicialMesh>(build_structured_cube(config.base_n));
  for (std::size_t r = 0; r < rungs.size(); ++r) {
    AdaptiveRunOptions opt;
    opt.adapt.source = pb.source();
    opt.adapt.kappa_squared = config.kappa_squared;
    opt.adapt.threads = config.threads;
    opt.initial = [&pb](const SimplicialMesh& m) { return pb.initial(m); };
    Snapshot last;
    opt.on_step = [&](const AdaptStepResult& s, const AdaptiveStepSummary& sum) {
      if (!config.write_vtu) return;
      const std::string name = "adaptive_rung" + std::to_string(r);
      auto rep = std::make_shared<const EstimatorReport>(s.report);
      if (config.snapshot_every > 0 && sum.n % config.snapshot_every == 0)
        res.snapshots.push_back({name + "_step" + std::to_string(sum.n), s.solve_mesh, s.solve_state, s.report.marking, rep});
      last = {name, s.solve_mesh, s.solve_state, s.report.marking, rep};
    };
    auto run = run_adaptive(base, pb.params, rungs[r], config.t_final, config.tau, opt);
    if (!run.completed) throw Error("adaptive rung " + std::to_string(r) + " failed: " + run.diagnostic);
    ConvergenceRow row{run.final_mesh->num_vertices(), 0.0, run.wall_seconds};
    if (mms) {
      P1Space space(run.final_mesh, config.threads);
      const auto e = error_norms(
          space, run.final_state.u, [&](const Vec3& x) { return pb.mms->exact(x, config.t_final)[0]; },
          [&](const Vec3& x) { return pb.mms->exact_gradient(x, config.t_final)[0]; });
      row.l2_error = e.l2;
    } else {
      row.l2_error = solution_difference(*run.final_mesh, run.final_state, *reference->mesh, reference->state,
                                         config.composite_error);
    }
    res.rows.push_back(row);
    if (config.write_vtu && last.mesh) res.snapshots.push_back(std::move(last));
    res.adaptive_runs.push_back(std::move(run));
  }
  res.phase_seconds["ladder"] = seconds_since(t0);
  for (std::size_t i = 0; i + 1 < res.rows.size(); ++i)
    if (!(res.rows[i + 1].l2_error < res.rows[i].l2_error))
      res.warnings.push_back("errors not strictly decreasing between rungs " + std::to_string(i) + " and " +
                             std::to_string(i + 1));
  return res;
}

StudyResult run_temporal_study(const RunConfig& config) {
  config.validate();
  StudyResult res;
  const Problem pb = make_problem(config);
  const auto t0 = clock_type::now();
  std::vector<UniformSolve> sols;
  for (double tau : config.taus) {
    RunConfig c = config;
    c.tau = tau;
    sols.push_back(solve_uniform(c, pb, config.base_n));
  }
  for (std::size_t i = 0; i + 1 < sols.size(); ++i) {
    const double e = solution_difference(*sols[i].mesh, sols[i].state, *sols[i + 1].mesh, sols[i + 1].state,
                                         config.composite_error);
    res.taus.push_back(config.taus[i]);
    res.temporal_errors.push_back(e);
    res.rows.push_back({sols[i].mesh->num_vertices(), e, sols[i].wall});
  }
  res.phase_seconds["solves"] = seconds_since(t0);
  if (config.write_vtu) res.snapshots.push_back({"temporal_finest", sols.back().mesh, sols.back().state, {}, nullptr});
  return res;
}

StudyResult run_study(const RunConfig& config) {
  switch (config.kind) {
    case ExperimentKind::uniform:
    case ExperimentKind::mms_spatial: return run_uniform_study(config);
    case ExperimentKind::adaptive: return run_adaptive_study(config);
    case ExperimentKind::mms_temporal: return run_temporal_study(config);
  }
  throw ConfigError("unknown experiment kind");
}

std::string provenance() { return std::string("invadapt 0.1.0 (rev ") + INVADAPT_GIT_REV + ")"; }

void emit_outputs(const std::string& dir, const RunConfig& config, const StudyResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());

  using nlohmann::json;
  json cfg = json::object();
  {
    std::istringstream is(print_config(config));
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find(" = ");
      cfg[line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  json rows = json::array();
  for (const auto& r : result.rows) rows.push_back({{"dofs", r.dofs}, {"l2_error", r.l2_error}, {"wall_seconds", r.wall_seconds}});
  json eoc = nullptr;
  if (result.rows.size() >= 2 && config.kind != ExperimentKind::mms_temporal) {
    const auto rep = compute_eoc(result.rows);
    json pairs = json::array();
    for (const auto& p : rep.pairs) pairs.push_back(p ? json(*p) : json(nullptr));
    eoc = {{"pairs", pairs}, {"aggregate", rep.aggregate ? json(*rep.aggregate) : json(nullptr)}, {"notices", rep.notices}};
  }
  json temporal = nullptr;
  if (result.taus.size() >= 2) temporal = {{"taus", result.taus}, {"differences", result.temporal_errors},
                                           {"eoc", temporal_eoc(result.taus, result.temporal_errors)}};
  json runs = json::array();
  for (const auto& run : result.adaptive_runs) {
    json steps = json::array();
    for (const auto& s : run.steps)
      steps.push_back({{"n", s.n}, {"t", s.t}, {"tau", s.tau}, {"dofs", s.dofs}, {"tets", s.tets},
                       {"alpha", s.alpha}, {"theta", s.theta}, {"gamma", s.gamma}, {"kappa", s.kappa},
                       {"k_n", s.k_n}, {"solves", s.solves}, {"wall_seconds", s.wall_seconds},
                       {"budget_exceeded", s.budget_exceeded}});
    runs.push_back({{"wall_seconds", run.wall_seconds}, {"steps", steps}});
  }
  json snaps = json::array();
  for (const auto& s : result.snapshots) {
    const std::string path = dir + "/" + s.name + ".vtu";
    std::vector<double> ind = s.indicator;
    if (ind.empty()) ind.assign(s.mesh->num_tets(), 0.0);
    write_vtu(path, *s.mesh, {{"u", s.state.u}, {"v", s.state.v}, {"w", s.state.w}}, {{"indicator", ind}});
    if (s.report) write_report_csv(dir + "/" + s.name + "_estimator.csv", *s.report);
    snaps.push_back(s.name + ".vtu");
  }
  if (!result.rows.empty()) write_rows_csv(dir + "/rows.csv", result.rows);

  json manifest{{"provenance", provenance()},
                {"kind", to_string(config.kind)},
                {"config", cfg},
                {"rows", rows},
                {"eoc", eoc},
                {"temporal", temporal},
                {"adaptive_runs", runs},
                {"snapshots", snaps},
                {"phase_seconds", result.phase_seconds},
                {"warnings", result.warnings}};
  const std::string path = dir + "/manifest.json";
  std::ofstream os(path);
  os << manifest.dump(1) << '\n';
  if (!os) throw InputError("cannot write '" + path + "'");
}

bool run_verification(std::ostream& os) {
  bool all = true;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    os << (ok ? "PASS " : "FAIL ") << name << ": " << detail << '\n';
    all = all && ok;
  };
  char buf[160];

  {
    const auto m = build_structured_cube(20);
    const bool ok = m.num_vertices() == 9261 && m.num_tets() == 48000 && audit(m).ok();
    std::snprintf(buf, sizeof buf, "%zu nodes, %zu tets", m.num_vertices(), m.num_tets());
    report("structured mesh n=20", ok, buf);
  }
  {
    RunConfig c;
    c.kind = ExperimentKind::mms_spatial;
    c.levels = {4, 8};
    c.tau = 5e-4;
    c.t_final = 5e-3;
    c.write_vtu = false;
    const auto res = run_uniform_study(c);
    const auto eoc = compute_eoc(res.rows);
    const double e = eoc.pairs[0].value_or(0.0);
    std::snprintf(buf, sizeof buf, "errors %.3e %.3e, EOC %.3f (>= 1.8)", res.rows[0].l2_error, res.rows[1].l2_error, e);
    report("manufactured spatial order", e >= 1.8, buf);
  }
  for (int set : {1, 2}) {
    const ModelParams p = parameter_set(set);
    auto mesh = std::make_shared<const SimplicialMesh>(build_structured_cube(2));
    P1Space space(mesh);
    std::mt19937_64 rng(42 + set);
    std::uniform_real_distribution<double> U(0.0, 1.0), D(-1.0, 1.0);
    StateFields prev = StateFields::zeros(*mesh), x = prev;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (int f = 0; f < 3; ++f) {
        prev.field(f)[i] = U(rng);
        x.field(f)[i] = U(rng);
      }
    StepProblem pb{&p, 0.01, {}, 0.01, JacobianMode::analytic};
    const auto sys = assemble_system(space, x, prev, pb, true);
    std::vector<double> dir(3 * x.size());
    for (double& d : dir) d = D(rng);
    const double h = 1e-6;
    auto xp = x.pack(), xm = x.pack();
    for (std::size_t i = 0; i < dir.size(); ++i) {
      xp[i] += h * dir[i];
      xm[i] -= h * dir[i];
    }
    const auto fp = assemble_system(space, StateFields::unpack(mesh->id(), xp), prev, pb, false).residual;
    const auto fm = assemble_system(space, StateFields::unpack(mesh->id(), xm), prev, pb, false).residual;
    const auto jd = sys.jacobian * dir;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < jd.size(); ++i) {
      const double fd = (fp[i] - fm[i]) / (2 * h);
      num += (fd - jd[i]) * (fd - jd[i]);
      den += jd[i] * jd[i];
    }
    const double rel = std::sqrt(num / den);
    std::snprintf(buf, sizeof buf, "relative error %.2e (< 1e-6)", rel);
    report("Jacobian vs finite differences, set " + std::to_string(set), rel < 1e-6, buf);
  }
  for (int set : {1, 2}) {
    const ModelParams p = parameter_set(set);
    auto mesh = std::make_shared<const SimplicialMesh>(build_structured_cube(3));
    P1Space space(mesh);
    const auto s = StateFields::constant(*mesh, 0.0, 1.0, 0.0);
    const auto r = estimate(space, s, s, 0.01, p);
    const double worst = std::max({std::abs(r.alpha), std::abs(r.theta), std::abs(r.gamma), std::abs(r.kappa)});
    std::snprintf(buf, sizeof buf, "max(alpha, theta, gamma, kappa) = %.1e", worst);
    report("zero estimator at steady state, set " + std::to_string(set), worst < 1e-14, buf);
  }
  {
    std::mt19937_64 rng(7);
    bool ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
      SimplicialMesh m = build_structured_cube(1 + trial % 2);
      for (int op = 0; op < 4 && ok; ++op) {
        std::vector<Index> marked;
        std::bernoulli_distribution pick(0.3);
        for (Index t = 0; t < static_cast<Index>(m.num_tets()); ++t)
          if (pick(rng)) marked.push_back(t);
        m = (op % 3 == 2) ? coarsen(m, marked).mesh : refine(m, marked, {1e-3});
        ok = audit(m).ok();
      }
    }
    report("random refine/coarsen audits", ok, ok ? "20 sequences legal" : "illegal mesh produced");
  }
  return all;
}

}  // namespace invadapt
