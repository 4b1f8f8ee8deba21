#include "invadapt/estimator.hpp"

#include <cmath>
#include <cstdio>

namespace invadapt {

namespace {

using Bary = std::array<double, 4>;
using Local = std::array<double, 4>;

// Gradient of a local P1 function; exactly zero for equal coefficients.
Vec3 local_gradient(const TetGeometry& g, const Local& c) {
  Vec3 r;
  for (int k = 1; k < 4; ++k) r += (c[k] - c[0]) * g.grad_lambda[k];
  return r;
}

double local_value(const Local& c, const Bary& b) {
  return c[0] * b[0] + c[1] * b[1] + c[2] * b[2] + c[3] * b[3];
}

// L² projection of f onto P1(K): c = (20/|K|)(b - Σb/5) with bᵢ = ∫_K f φᵢ.
template <typename F>
Local project_local(F f) {
  const auto& rule = tet_rule(5);
  Local m{};
  double sum = 0.0;
  for (std::size_t q = 0; q < rule.weights.size(); ++q) {
    const double fq = f(rule.points[q]);
    sum += rule.weights[q] * fq;
    for (int i = 0; i < 4; ++i) m[i] += rule.weights[q] * fq * rule.points[q][i];
  }
  Local c;
  for (int i = 0; i < 4; ++i) c[i] = 20.0 * (m[i] - sum / 5.0);
  return c;
}

Local nodal(const std::vector<double>& f, const Tet& t) {
  return {f[t.v[0]], f[t.v[1]], f[t.v[2]], f[t.v[3]]};
}

Bary face_bary_in_tet(const SimplicialMesh& mesh, Index f, Index t, const std::array<double, 3>& b) {
  const Face& face = mesh.faces()[f];
  const Tet& tet = mesh.tets()[t];
  Bary out{};
  for (int k = 0; k < 3; ++k)
    for (int l = 0; l < 4; ++l)
      if (tet.v[l] == face.v[k]) out[l] = b[k];
  return out;
}

// J_E(n·F) = n·(F_right - F_left); the exterior flux is zero on ∂Ω.
template <typename Flux>
double normal_jump(const P1Space& space, Index f, const std::array<double, 3>& b, Flux flux) {
  const Face& face = space.mesh().faces()[f];
  const Vec3& n = space.geometry().faces[f].normal;
  const double left = dot(n, flux(face.left, face_bary_in_tet(space.mesh(), f, face.left, b)));
  if (face.on_boundary()) return -left;
  const double right = dot(n, flux(face.right, face_bary_in_tet(space.mesh(), f, face.right, b)));
  return right - left;
}

template <typename F>
double element_norm2(const P1Space& space, Index t, F f) {
  const auto& rule = tet_rule(5);
  double s = 0.0;
  for (std::size_t q = 0; q < rule.weights.size(); ++q) {
    const double v = f(rule.points[q]);
    s += rule.weights[q] * v * v;
  }
  return s * space.geometry().tets[t].volume;
}

template <typename F>
double face_norm2(const P1Space& space, Index f, F fn) {
  const auto& rule = triangle_rule(5);
  double s = 0.0;
  for (std::size_t q = 0; q < rule.weights.size(); ++q) {
    const double v = fn(rule.points[q]);
    s += rule.weights[q] * v * v;
  }
  return s * space.geometry().faces[f].area;
}

std::array<double, 3> d1_partials(const ModelParams& p, double u, double v, double w) {
  return p.d1.has_partials() ? p.d1.partials(u, v, w) : p.d1.fd_partials(u, v, w);
}

double chi_derivative(const ModelParams& p, double v) {
  return p.chi.has_derivative() ? p.chi.derivative(v) : p.chi.fd_derivative(v);
}

}  // namespace

ResidualEvaluator::ResidualEvaluator(const P1Space& space, const StateFields& state,
                                     const StateFields& prev, double tau, const ModelParams& params,
                                     const EstimatorOptions& options)
    : space_(space), state_(state), prev_(prev), tau_(tau), params_(params), options_(options) {
  if (!(tau > 0.0)) throw InputError("estimator: time step must be positive");
  state.check(space.mesh());
  prev.check(space.mesh());
  d1_exact_ = params.d1.is_constant();
  g1_exact_ = params.chi.is_constant();
  const auto& tets = space.mesh().tets();
  const auto nt = static_cast<Index>(tets.size());
  d1h_.resize(nt);
  g1h_.resize(nt);
  grad_.resize(nt);
  for (Index t = 0; t < nt; ++t) {
    const Tet& tet = tets[t];
    for (int a = 0; a < 3; ++a) grad_[t][a] = element_gradient(space, t, state.field(a));
    const Local u = nodal(state.u, tet), v = nodal(state.v, tet), w = nodal(state.w, tet);
    if (d1_exact_) {
      d1h_[t].fill(params.d1.constant_value());
    } else {
      d1h_[t] = project_local([&](const Bary& b) {
        return params.d1(local_value(u, b), local_value(v, b), local_value(w, b));
      });
    }
    if (g1_exact_) {
      for (int k = 0; k < 4; ++k) g1h_[t][k] = params.chi.constant_value() * u[k];
    } else {
      g1h_[t] = project_local([&](const Bary& b) {
        return params.chi(local_value(v, b)) * local_value(u, b);
      });
    }
  }
}

double ResidualEvaluator::field_at(const std::vector<double>& f, Index t, const Bary& b) const {
  return local_value(nodal(f, space_.mesh().tets()[t]), b);
}

std::array<double, 4> ResidualEvaluator::face_to_tet(Index f, Index t,
                                                     const std::array<double, 3>& b) const {
  return face_bary_in_tet(space_.mesh(), f, t, b);
}

std::array<double, 3> ResidualEvaluator::element_residual(Index t, const Bary& b) const {
  const auto& geo = space_.geometry().tets[t];
  const double u = field_at(state_.u, t, b), v = field_at(state_.v, t, b),
               w = field_at(state_.w, t, b);
  const double du = (u - field_at(prev_.u, t, b)) / tau_;
  const double dv = (v - field_at(prev_.v, t, b)) / tau_;
  const double dw = (w - field_at(prev_.w, t, b)) / tau_;
  const ReactionTerms rt = reaction_terms(u, v, w, params_, true);
  std::array<double, 3> s{};
  if (options_.source) s = options_.source(space_.point(t, b), options_.time);
  const auto& g = grad_[t];
  // P1 fields have no second derivatives; the Laplacian parts are identically zero.
  constexpr double laplacian = 0.0;
  const double div_d1 = dot(local_gradient(geo, d1h_[t]), g[0]) + local_value(d1h_[t], b) * laplacian;
  const double div_g1 = dot(local_gradient(geo, g1h_[t]), g[1]) + local_value(g1h_[t], b) * laplacian;
  return {du - div_d1 + div_g1 - rt.g2 - s[0],
          dv - rt.fv - s[1],
          dw - params_.d2 * laplacian - rt.fw - s[2]};
}

Vec3 ResidualEvaluator::flux1(Index t, const Bary& b) const {
  return local_value(d1h_[t], b) * grad_[t][0] - local_value(g1h_[t], b) * grad_[t][1];
}

std::array<double, 3> ResidualEvaluator::face_residual(Index f, const std::array<double, 3>& b) const {
  const double j1 = normal_jump(space_, f, b, [this](Index t, const Bary& tb) { return flux1(t, tb); });
  const double j3 = normal_jump(space_, f, b, [this](Index t, const Bary&) {
    return params_.d2 * grad_[t][2];
  });
  return {-j1, 0.0, -j3};
}

Vec3 ResidualEvaluator::data_flux1(Index t, const Bary& b) const {
  Vec3 r;
  if (!d1_exact_) {
    const double d1 = params_.d1(field_at(state_.u, t, b), field_at(state_.v, t, b),
                                 field_at(state_.w, t, b));
    r += (d1 - local_value(d1h_[t], b)) * grad_[t][0];
  }
  if (!g1_exact_) {
    const double g1 = params_.chi(field_at(state_.v, t, b)) * field_at(state_.u, t, b);
    r -= (g1 - local_value(g1h_[t], b)) * grad_[t][1];
  }
  return r;
}

std::array<double, 3> ResidualEvaluator::element_data_error(Index t, const Bary& b) const {
  const auto& geo = space_.geometry().tets[t];
  const auto& g = grad_[t];
  double eta = 0.0;
  const double u = field_at(state_.u, t, b), v = field_at(state_.v, t, b),
               w = field_at(state_.w, t, b);
  if (!d1_exact_) {
    const auto d = d1_partials(params_, u, v, w);
    const Vec3 grad_d1 = d[0] * g[0] + d[1] * g[1] + d[2] * g[2];
    eta += dot(grad_d1 - local_gradient(geo, d1h_[t]), g[0]);
  }
  if (!g1_exact_) {
    const Vec3 grad_g1 = params_.chi(v) * g[0] + chi_derivative(params_, v) * u * g[1];
    eta -= dot(grad_g1 - local_gradient(geo, g1h_[t]), g[1]);
  }
  return {eta, 0.0, 0.0};
}

std::array<double, 3> ResidualEvaluator::face_data_error(Index f, const std::array<double, 3>& b) const {
  if (d1_exact_ && g1_exact_) return {0.0, 0.0, 0.0};
  const double j = normal_jump(space_, f, b, [this](Index t, const Bary& tb) { return data_flux1(t, tb); });
  return {-j, 0.0, 0.0};
}

ResidualNorms element_residuals(const ResidualEvaluator& ev) {
  const P1Space& space = ev.space();
  ResidualNorms out;
  const auto nt = static_cast<Index>(space.mesh().num_tets());
  out.element.resize(nt);
  for (Index t = 0; t < nt; ++t)
    for (int i = 0; i < 3; ++i)
      out.element[t][i] =
          element_norm2(space, t, [&](const Bary& b) { return ev.element_residual(t, b)[i]; });
  return out;
}

ResidualNorms edge_residuals(const ResidualEvaluator& ev) {
  const P1Space& space = ev.space();
  ResidualNorms out;
  const auto nf = static_cast<Index>(space.mesh().num_faces());
  out.face.resize(nf);
  for (Index f = 0; f < nf; ++f) {
    out.face[f][0] = face_norm2(space, f, [&](const auto& b) { return ev.face_residual(f, b)[0]; });
    out.face[f][1] = 0.0;
    out.face[f][2] = face_norm2(space, f, [&](const auto& b) { return ev.face_residual(f, b)[2]; });
  }
  return out;
}

ResidualNorms data_errors(const ResidualEvaluator& ev) {
  const P1Space& space = ev.space();
  ResidualNorms out;
  const auto nt = static_cast<Index>(space.mesh().num_tets());
  const auto nf = static_cast<Index>(space.mesh().num_faces());
  out.element.assign(nt, {0.0, 0.0, 0.0});
  out.face.assign(nf, {0.0, 0.0, 0.0});
  for (Index t = 0; t < nt; ++t)
    out.element[t][0] =
        element_norm2(space, t, [&](const Bary& b) { return ev.element_data_error(t, b)[0]; });
  for (Index f = 0; f < nf; ++f)
    out.face[f][0] = face_norm2(space, f, [&](const auto& b) { return ev.face_data_error(f, b)[0]; });
  return out;
}

void spatial_indicator(const P1Space& space, const ResidualNorms& rho, const ResidualNorms& eta,
                       EstimatorReport& r) {
  const auto& geo = space.geometry();
  const auto& faces = space.mesh().faces();
  const std::size_t nt = geo.tets.size(), nf = geo.faces.size();
  if (rho.element.size() != nt || rho.face.size() != nf || eta.element.size() != nt ||
      eta.face.size() != nf)
    throw InputError("spatial_indicator: residual sizes do not match the mesh");
  r.mesh_id = space.mesh().id();
  r.element_rho.assign(nt, {});
  r.element_eta.assign(nt, {});
  r.face_rho.assign(nf, {});
  r.face_eta.assign(nf, {});
  r.marking.assign(nt, 0.0);
  r.alpha = r.theta = 0.0;
  r.alpha_by_equation = {0.0, 0.0, 0.0};
  for (std::size_t t = 0; t < nt; ++t) {
    const double h2 = geo.tets[t].diameter * geo.tets[t].diameter;
    for (int i = 0; i < 3; ++i) {
      r.element_rho[t][i] = h2 * rho.element[t][i];
      r.element_eta[t][i] = h2 * eta.element[t][i];
      r.alpha_by_equation[i] += r.element_rho[t][i];
      r.theta += r.element_eta[t][i];
      r.marking[t] += r.element_rho[t][i] + r.element_eta[t][i];
    }
  }
  for (std::size_t f = 0; f < nf; ++f) {
    const double h = geo.faces[f].diameter;
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
      r.face_rho[f][i] = (i == 1) ? 0.0 : h * rho.face[f][i];
      r.face_eta[f][i] = (i == 1) ? 0.0 : h * eta.face[f][i];
      r.alpha_by_equation[i] += r.face_rho[f][i];
      r.theta += r.face_eta[f][i];
      total += r.face_rho[f][i] + r.face_eta[f][i];
    }
    if (faces[f].on_boundary()) {
      r.marking[faces[f].left] += total;
    } else {
      r.marking[faces[f].left] += 0.5 * total;
      r.marking[faces[f].right] += 0.5 * total;
    }
  }
  r.alpha = r.alpha_by_equation[0] + r.alpha_by_equation[1] + r.alpha_by_equation[2];
}

TemporalIndicator temporal_indicator(const P1Space& space, const StateFields& state,
                                     const StateFields& prev, double tau, const ModelParams& params,
                                     const EstimatorOptions& options) {
  if (!(tau > 0.0)) throw InputError("temporal_indicator: time step must be positive");
  state.check(space.mesh());
  prev.check(space.mesh());
  const auto& mesh = space.mesh();
  const auto& tets = mesh.tets();
  const auto& geo = space.geometry();
  const auto nt = static_cast<Index>(tets.size());
  const std::size_t n = mesh.num_vertices();

  StateFields delta = state;
  for (int a = 0; a < 3; ++a)
    for (std::size_t i = 0; i < n; ++i) delta.field(a)[i] -= prev.field(a)[i];

  TemporalIndicator out;
  double incr = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double l2 = norms(space, delta.field(a)).l2;
    incr += l2 * l2;
  }
  out.kappa = options.kappa_squared ? incr * incr : incr;

  // Flux of the linearized u-operator: F = a∇u + c∇δu - b∇v - e∇δv with coefficients
  // a = ∂d1·δ, c = d1, b = ∂g1·δ, e = g1 projected onto P1(K).
  struct Coefficients {
    Local a, c, b, e;
  };
  std::vector<Coefficients> coef(nt);
  std::vector<std::array<Vec3, 6>> grads(nt);  // ∇u, ∇v, ∇w, ∇δu, ∇δv, ∇δw
  const bool d1_const = params.d1.is_constant();
  const bool chi_const = params.chi.is_constant();
  for (Index t = 0; t < nt; ++t) {
    const Tet& tet = tets[t];
    for (int a = 0; a < 3; ++a) {
      grads[t][a] = element_gradient(space, t, state.field(a));
      grads[t][a + 3] = element_gradient(space, t, delta.field(a));
    }
    const Local u = nodal(state.u, tet), v = nodal(state.v, tet), w = nodal(state.w, tet);
    const Local du = nodal(delta.u, tet), dv = nodal(delta.v, tet), dw = nodal(delta.w, tet);
    Coefficients& c = coef[t];
    if (d1_const) {
      c.a.fill(0.0);
      c.c.fill(params.d1.constant_value());
    } else {
      c.a = project_local([&](const Bary& b) {
        const auto d = d1_partials(params, local_value(u, b), local_value(v, b), local_value(w, b));
        return d[0] * local_value(du, b) + d[1] * local_value(dv, b) + d[2] * local_value(dw, b);
      });
      c.c = project_local([&](const Bary& b) {
        return params.d1(local_value(u, b), local_value(v, b), local_value(w, b));
      });
    }
    if (chi_const) {
      const double chi = params.chi.constant_value();
      for (int k = 0; k < 4; ++k) {
        c.b[k] = chi * du[k];
        c.e[k] = chi * u[k];
      }
    } else {
      c.b = project_local([&](const Bary& b) {
        const double vb = local_value(v, b);
        return params.chi(vb) * local_value(du, b) +
               chi_derivative(params, vb) * local_value(u, b) * local_value(dv, b);
      });
      c.e = project_local([&](const Bary& b) { return params.chi(local_value(v, b)) * local_value(u, b); });
    }
  }

  auto flux_u = [&](Index t, const Bary& b) {
    const auto& c = coef[t];
    const auto& g = grads[t];
    return local_value(c.a, b) * g[0] + local_value(c.c, b) * g[3] - local_value(c.b, b) * g[1] -
           local_value(c.e, b) * g[4];
  };
  auto flux_w = [&](Index t, const Bary&) { return params.d2 * grads[t][5]; };

  for (Index t = 0; t < nt; ++t) {
    const Tet& tet = tets[t];
    const auto& tg = geo.tets[t];
    const auto& c = coef[t];
    const auto& g = grads[t];
    const double div_f = dot(local_gradient(tg, c.a), g[0]) + dot(local_gradient(tg, c.c), g[3]) -
                         dot(local_gradient(tg, c.b), g[1]) - dot(local_gradient(tg, c.e), g[4]);
    const Local u = nodal(state.u, tet), v = nodal(state.v, tet), w = nodal(state.w, tet);
    const Local du = nodal(delta.u, tet), dv = nodal(delta.v, tet), dw = nodal(delta.w, tet);
    std::array<double, 3> local{};
    for (int eq = 0; eq < 3; ++eq) {
      local[eq] = element_norm2(space, t, [&](const Bary& b) {
        const ReactionTerms rt = reaction_terms(local_value(u, b), local_value(v, b), local_value(w, b), params, true);
        const std::array<double, 3> d{local_value(du, b), local_value(dv, b), local_value(dw, b)};
        if (eq == 0) return -(rt.dg2[0] * d[0] + rt.dg2[1] * d[1]) - div_f;
        if (eq == 1) return -(rt.dfv[0] * d[0] + rt.dfv[1] * d[1] + rt.dfv[2] * d[2]);
        return -(rt.dfw[0] * d[0] + rt.dfw[1] * d[1] + rt.dfw[2] * d[2]);
      });
    }
    const double h2 = tg.diameter * tg.diameter;
    for (int eq = 0; eq < 3; ++eq) out.p[eq] += h2 * local[eq];
  }
  for (Index f = 0; f < static_cast<Index>(mesh.num_faces()); ++f) {
    const double h = geo.faces[f].diameter;
    out.p[0] += h * face_norm2(space, f, [&](const auto& b) { return normal_jump(space, f, b, flux_u); });
    out.p[2] += h * face_norm2(space, f, [&](const auto& b) { return normal_jump(space, f, b, flux_w); });
  }
  out.gamma = tau / 3.0 * (out.p[0] + out.p[1] + out.p[2]);
  return out;
}

EstimatorReport estimate(const P1Space& space, const StateFields& state, const StateFields& prev,
                         double tau, const ModelParams& params, const EstimatorOptions& options) {
  const ResidualEvaluator ev(space, state, prev, tau, params, options);
  ResidualNorms rho = element_residuals(ev);
  rho.face = edge_residuals(ev).face;
  const ResidualNorms eta = data_errors(ev);
  EstimatorReport report;
  spatial_indicator(space, rho, eta, report);
  const TemporalIndicator ti = temporal_indicator(space, state, prev, tau, params, options);
  report.gamma = ti.gamma;
  report.kappa = ti.kappa;
  report.gamma_by_equation = ti.p;
  return report;
}

void EstimatorTotals::add_step(const EstimatorReport& report, double tau) {
  spatial += tau * (report.alpha + report.theta);
  temporal += report.gamma + report.kappa;
}

double effectivity(double estimator_total, double true_error) {
  if (!(true_error > 0.0)) return std::numeric_limits<double>::infinity();
  return std::sqrt(std::max(0.0, estimator_total)) / true_error;
}

void write_report_csv(const std::string& path, const EstimatorReport& report) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw InputError("cannot write '" + path + "'");
  std::fprintf(f, "element,rho1,rho2,rho3,eta1,eta2,eta3,total\n");
  for (std::size_t k = 0; k < report.marking.size(); ++k) {
    const auto& r = report.element_rho[k];
    const auto& e = report.element_eta[k];
    std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", k, r[0], r[1], r[2], e[0], e[1], e[2],
                 report.marking[k]);
  }
  if (std::fclose(f) != 0) throw InputError("write failed for '" + path + "'");
}

}  // namespace invadapt
