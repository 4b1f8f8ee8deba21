#include "invadapt/fem.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "invadapt/linalg.hpp"

namespace invadapt {

void parallel_for(Index n, int threads, const std::function<void(Index, Index)>& f) {
  if (n <= 0) return;
  if (threads <= 1 || n < 64) {
    f(0, n);
    return;
  }
  const Index chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  for (Index b = 0; b < n; b += chunk) pool.emplace_back(f, b, std::min(n, b + chunk));
  for (auto& th : pool) th.join();
}

P1Space::P1Space(MeshPtr mesh, int threads)
    : mesh_(std::move(mesh)), threads_(std::max(1, threads)), geometry_(geometry_tables(*mesh_)) {
  const auto& tets = mesh_->tets();
  const Index n = num_nodes();
  std::vector<std::uint64_t> pairs;
  pairs.reserve(16 * tets.size());
  for (const Tet& t : tets)
    for (Index a : t.v)
      for (Index b : t.v)
        pairs.push_back((static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b));
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  row_ptr_.assign(n + 1, 0);
  cols_.resize(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    ++row_ptr_[static_cast<Index>(pairs[p] >> 32) + 1];
    cols_[p] = static_cast<Index>(pairs[p] & 0xffffffffu);
  }
  for (Index i = 0; i < n; ++i) row_ptr_[i + 1] += row_ptr_[i];

  scatter_.resize(16 * tets.size());
  for (std::size_t t = 0; t < tets.size(); ++t)
    for (int i = 0; i < 4; ++i) {
      const Index gi = tets[t].v[i];
      const auto b = cols_.begin() + row_ptr_[gi];
      const auto e = cols_.begin() + row_ptr_[gi + 1];
      for (int j = 0; j < 4; ++j)
        scatter_[16 * t + 4 * i + j] =
            static_cast<Index>(std::lower_bound(b, e, tets[t].v[j]) - cols_.begin());
    }

  block_row_ptr_.assign(3 * n + 1, 0);
  for (int a = 0; a < 3; ++a)
    for (Index i = 0; i < n; ++i)
      block_row_ptr_[a * n + i + 1] = 3 * (row_ptr_[i + 1] - row_ptr_[i]);
  for (Index r = 0; r < 3 * n; ++r) block_row_ptr_[r + 1] += block_row_ptr_[r];
}

SparseOperator P1Space::scalar_pattern() const {
  return SparseOperator(num_nodes(), row_ptr_, cols_);
}

SparseOperator P1Space::block_pattern() const {
  const Index n = num_nodes();
  std::vector<Index> cols(block_row_ptr_.back());
  for (int a = 0; a < 3; ++a)
    for (Index i = 0; i < n; ++i) {
      Index p = block_row_ptr_[a * n + i];
      for (int b = 0; b < 3; ++b)
        for (Index q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) cols[p++] = b * n + cols_[q];
    }
  return SparseOperator(3 * n, block_row_ptr_, std::move(cols));
}

Index P1Space::block_position(Index t, int a, int i, int b, int j) const {
  const Index n = num_nodes();
  const Index gi = mesh_->tets()[t].v[i];
  const Index deg = row_ptr_[gi + 1] - row_ptr_[gi];
  return block_row_ptr_[a * n + gi] + b * deg + (scatter_[16 * t + 4 * i + j] - row_ptr_[gi]);
}

Vec3 P1Space::point(Index t, const std::array<double, 4>& bary) const {
  const auto& v = mesh_->vertices();
  const auto& tet = mesh_->tets()[t];
  Vec3 x;
  for (int k = 0; k < 4; ++k) x += bary[k] * v[tet.v[k]];
  return x;
}

Vec3 element_gradient(const P1Space& space, Index t, std::span<const double> field) {
  const auto& g = space.geometry().tets[t].grad_lambda;
  const auto& tet = space.mesh().tets()[t];
  // Differences against vertex 0 so that constant fields have exactly zero gradient.
  const double f0 = field[tet.v[0]];
  Vec3 r;
  for (int k = 1; k < 4; ++k) r += (field[tet.v[k]] - f0) * g[k];
  return r;
}

namespace {

constexpr Index kChunk = 2048;

double mass_entry(double volume, int i, int j) { return volume / 20.0 * (i == j ? 2.0 : 1.0); }

// Element-local values scattered after a parallel chunk.
template <typename Local, typename Compute, typename Scatter>
void element_loop(const P1Space& space, Compute compute, Scatter scatter) {
  const auto nt = static_cast<Index>(space.mesh().num_tets());
  std::vector<Local> buffer(std::min(kChunk, nt));
  for (Index b = 0; b < nt; b += kChunk) {
    const Index e = std::min(nt, b + kChunk);
    parallel_for(e - b, space.threads(), [&](Index lo, Index hi) {
      for (Index k = lo; k < hi; ++k) compute(b + k, buffer[k]);
    });
    for (Index t = b; t < e; ++t) scatter(t, buffer[t - b]);
  }
}

using Local16 = std::array<double, 16>;

SparseOperator assemble_scalar(const P1Space& space,
                               const std::function<void(Index, Local16&)>& compute) {
  SparseOperator a = space.scalar_pattern();
  auto& vals = a.values();
  element_loop<Local16>(space, compute, [&](Index t, const Local16& loc) {
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) vals[space.scalar_position(t, i, j)] += loc[4 * i + j];
  });
  return a;
}

void require_finite(double x, Index t, const char* what) {
  if (!std::isfinite(x)) throw ElementError(std::string("non-finite ") + what, t);
}

}  // namespace

SparseOperator assemble_mass(const P1Space& space) {
  const auto& geo = space.geometry().tets;
  return assemble_scalar(space, [&](Index t, Local16& loc) {
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) loc[4 * i + j] = mass_entry(geo[t].volume, i, j);
  });
}

SparseOperator assemble_diffusion(const P1Space& space, double c) {
  if (!std::isfinite(c)) throw InputError("assemble_diffusion: non-finite coefficient");
  const auto& geo = space.geometry().tets;
  return assemble_scalar(space, [&](Index t, Local16& loc) {
    const auto& g = geo[t].grad_lambda;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) loc[4 * i + j] = c * geo[t].volume * dot(g[i], g[j]);
  });
}

SparseOperator assemble_diffusion(const P1Space& space, const PointCoefficient& c) {
  const auto& geo = space.geometry().tets;
  const auto& rule = tet_rule(2);
  return assemble_scalar(space, [&](Index t, Local16& loc) {
    double s = 0.0;
    for (std::size_t q = 0; q < rule.weights.size(); ++q) {
      const double cq = c(t, space.point(t, rule.points[q]));
      require_finite(cq, t, "diffusion coefficient");
      s += rule.weights[q] * cq;
    }
    const auto& g = geo[t].grad_lambda;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) loc[4 * i + j] = s * geo[t].volume * dot(g[i], g[j]);
  });
}

SparseOperator assemble_haptotaxis(const P1Space& space, const StateFields& state,
                                   const ModelParams& params) {
  state.check(space.mesh());
  const auto& geo = space.geometry().tets;
  const auto& rule = tet_rule(5);
  return assemble_scalar(space, [&](Index t, Local16& loc) {
    const auto& tet = space.mesh().tets()[t];
    const auto& g = geo[t].grad_lambda;
    const Vec3 gv = element_gradient(space, t, state.v);
    loc.fill(0.0);
    for (std::size_t q = 0; q < rule.weights.size(); ++q) {
      const auto& phi = rule.points[q];
      double vq = 0.0;
      for (int k = 0; k < 4; ++k) vq += phi[k] * state.v[tet.v[k]];
      const double chi = params.chi(vq);
      require_finite(chi, t, "sensitivity");
      const double dv = rule.weights[q] * geo[t].volume * chi;
      for (int i = 0; i < 4; ++i) {
        const double gi = dot(gv, g[i]);
        for (int j = 0; j < 4; ++j) loc[4 * i + j] += dv * phi[j] * gi;
      }
    }
  });
}

std::vector<double> Residuals::pack() const {
  std::vector<double> x;
  x.reserve(3 * u.size());
  x.insert(x.end(), u.begin(), u.end());
  x.insert(x.end(), v.begin(), v.end());
  x.insert(x.end(), w.begin(), w.end());
  return x;
}

namespace {

struct ElementSystem {
  double r[3][4];
  double j[3][3][4][4];
};

void element_system(const P1Space& space, Index t, const StateFields& s, const StateFields& s0,
                    const StepProblem& pb, bool with_jacobian, ElementSystem& out) {
  const ModelParams& p = *pb.params;
  const auto& tet = space.mesh().tets()[t];
  const auto& geo = space.geometry().tets[t];
  const auto& g = geo.grad_lambda;
  const double vol = geo.volume;
  const double inv_tau = 1.0 / pb.tau;
  const bool fd = pb.mode == JacobianMode::coefficient_fd || !with_jacobian;

  double x[3][4], x0[3][4];
  for (int k = 0; k < 4; ++k) {
    x[0][k] = s.u[tet.v[k]];
    x[1][k] = s.v[tet.v[k]];
    x[2][k] = s.w[tet.v[k]];
    x0[0][k] = s0.u[tet.v[k]];
    x0[1][k] = s0.v[tet.v[k]];
    x0[2][k] = s0.w[tet.v[k]];
  }
  Vec3 grad[3];
  for (int a = 0; a < 3; ++a)
    for (int k = 1; k < 4; ++k) grad[a] += (x[a][k] - x[a][0]) * g[k];
  double gg[4][4], gu_g[4], gv_g[4], gw_g[4];
  for (int i = 0; i < 4; ++i) {
    gu_g[i] = dot(grad[0], g[i]);
    gv_g[i] = dot(grad[1], g[i]);
    gw_g[i] = dot(grad[2], g[i]);
    for (int j = 0; j < 4; ++j) gg[i][j] = dot(g[i], g[j]);
  }

  std::fill(&out.r[0][0], &out.r[0][0] + 12, 0.0);
  if (with_jacobian) std::fill(&out.j[0][0][0][0], &out.j[0][0][0][0] + 144, 0.0);

  // Time derivative and constant-coefficient diffusion.
  const bool d1_const = p.d1.is_constant();
  const double d1c = d1_const ? p.d1.constant_value() : 0.0;
  for (int i = 0; i < 4; ++i) {
    out.r[0][i] += d1c * vol * gu_g[i];
    out.r[2][i] += p.d2 * vol * gw_g[i];
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double m = mass_entry(vol, i, j) * inv_tau;
      for (int a = 0; a < 3; ++a) out.r[a][i] += m * (x[a][j] - x0[a][j]);
      if (with_jacobian) {
        out.j[0][0][i][j] += m + d1c * vol * gg[i][j];
        out.j[1][1][i][j] += m;
        out.j[2][2][i][j] += m + p.d2 * vol * gg[i][j];
      }
    }

  const auto& rule = tet_rule(5);
  for (std::size_t q = 0; q < rule.weights.size(); ++q) {
    const auto& phi = rule.points[q];
    const double dv = rule.weights[q] * vol;
    double uq = 0, vq = 0, wq = 0;
    for (int k = 0; k < 4; ++k) {
      uq += phi[k] * x[0][k];
      vq += phi[k] * x[1][k];
      wq += phi[k] * x[2][k];
    }
    const ReactionTerms rt = reaction_terms(uq, vq, wq, p, fd);
    require_finite(rt.g1, t, "sensitivity");
    double d1q = 0.0;
    std::array<double, 3> dd1{};
    if (!d1_const) {
      d1q = p.d1(uq, vq, wq);
      require_finite(d1q, t, "diffusion coefficient");
      if (with_jacobian)
        dd1 = (pb.mode == JacobianMode::coefficient_fd && !p.d1.has_partials())
                  ? p.d1.fd_partials(uq, vq, wq)
                  : p.d1.partials(uq, vq, wq);
    }
    std::array<double, 3> src{};
    if (pb.source) src = pb.source(space.point(t, phi), pb.time);

    for (int i = 0; i < 4; ++i) {
      out.r[0][i] += dv * (d1q * gu_g[i] - rt.g1 * gv_g[i] - (rt.g2 + src[0]) * phi[i]);
      out.r[1][i] -= dv * (rt.fv + src[1]) * phi[i];
      out.r[2][i] -= dv * (rt.fw + src[2]) * phi[i];
    }
    if (!with_jacobian) continue;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const double pij = dv * phi[i] * phi[j];
        const double pj_gu = dv * phi[j] * gu_g[i];
        const double pj_gv = dv * phi[j] * gv_g[i];
        out.j[0][0][i][j] += d1q * dv * gg[i][j] + dd1[0] * pj_gu - rt.dg1[0] * pj_gv -
                             rt.dg2[0] * pij;
        out.j[0][1][i][j] += dd1[1] * pj_gu - rt.dg1[1] * pj_gv - rt.g1 * dv * gg[i][j] -
                             rt.dg2[1] * pij;
        out.j[0][2][i][j] += dd1[2] * pj_gu;
        for (int b = 0; b < 3; ++b) {
          out.j[1][b][i][j] -= rt.dfv[b] * pij;
          out.j[2][b][i][j] -= rt.dfw[b] * pij;
        }
      }
  }
}

void check_problem(const P1Space& space, const StateFields& state, const StateFields& prev,
                   const StepProblem& pb) {
  if (pb.params == nullptr) throw InputError("step problem without parameters");
  if (!(pb.tau > 0.0) || !std::isfinite(pb.tau)) throw InputError("time step must be positive");
  state.check(space.mesh());
  prev.check(space.mesh());
}

}  // namespace

AssembledSystem assemble_system(const P1Space& space, const StateFields& state,
                                const StateFields& prev, const StepProblem& problem,
                                bool with_jacobian) {
  check_problem(space, state, prev, problem);
  const Index n = space.num_nodes();
  AssembledSystem sys;
  sys.residual.assign(3 * static_cast<std::size_t>(n), 0.0);
  if (with_jacobian) sys.jacobian = space.block_pattern();
  auto& vals = sys.jacobian.values();
  const auto& tets = space.mesh().tets();
  element_loop<ElementSystem>(
      space,
      [&](Index t, ElementSystem& loc) {
        element_system(space, t, state, prev, problem, with_jacobian, loc);
      },
      [&](Index t, const ElementSystem& loc) {
        for (int a = 0; a < 3; ++a)
          for (int i = 0; i < 4; ++i) sys.residual[a * n + tets[t].v[i]] += loc.r[a][i];
        if (!with_jacobian) return;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int i = 0; i < 4; ++i)
              for (int j = 0; j < 4; ++j)
                vals[space.block_position(t, a, i, b, j)] += loc.j[a][b][i][j];
      });
  return sys;
}

Residuals assemble_reaction_residuals(const P1Space& space, const StateFields& state,
                                      const StateFields& prev, const StepProblem& problem) {
  const auto sys = assemble_system(space, state, prev, problem, false);
  const std::size_t n = space.num_nodes();
  Residuals r;
  r.u.assign(sys.residual.begin(), sys.residual.begin() + n);
  r.v.assign(sys.residual.begin() + n, sys.residual.begin() + 2 * n);
  r.w.assign(sys.residual.begin() + 2 * n, sys.residual.end());
  return r;
}

SparseOperator assemble_jacobian(const P1Space& space, const StateFields& state,
                                 const StateFields& prev, const StepProblem& problem) {
  return assemble_system(space, state, prev, problem, true).jacobian;
}

std::vector<double> l2_project(const P1Space& space, const PointCoefficient& f) {
  const Index n = space.num_nodes();
  const auto& rule = tet_rule(5);
  const auto& tets = space.mesh().tets();
  std::vector<double> b(n, 0.0);
  using Local4 = std::array<double, 4>;
  element_loop<Local4>(
      space,
      [&](Index t, Local4& loc) {
        loc.fill(0.0);
        const double vol = space.geometry().tets[t].volume;
        for (std::size_t q = 0; q < rule.weights.size(); ++q) {
          const double fq = f(t, space.point(t, rule.points[q]));
          require_finite(fq, t, "projected function");
          for (int i = 0; i < 4; ++i) loc[i] += rule.weights[q] * vol * fq * rule.points[q][i];
        }
      },
      [&](Index t, const Local4& loc) {
        for (int i = 0; i < 4; ++i) b[tets[t].v[i]] += loc[i];
      });
  const SparseOperator m = assemble_mass(space);
  std::vector<double> x0(n, 0.0);
  const auto res = conjugate_gradient(m, b, x0, {1e-14, 10000});
  if (!res.converged)
    throw Error("l2_project: mass solve did not converge (" + res.failure + ")");
  return res.x;
}

std::vector<double> l2_project(const P1Space& space, const std::function<double(const Vec3&)>& f) {
  return l2_project(space, PointCoefficient([&f](Index, const Vec3& x) { return f(x); }));
}

std::vector<double> interpolate(const SimplicialMesh& mesh,
                                const std::function<double(const Vec3&)>& f) {
  std::vector<double> out(mesh.num_vertices());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(mesh.vertices()[i]);
  return out;
}

Norms norms(const P1Space& space, std::span<const double> field) {
  if (field.size() != static_cast<std::size_t>(space.num_nodes()))
    throw InputError("norms: field length mismatch");
  double l2 = 0.0, semi = 0.0;
  const auto& tets = space.mesh().tets();
  for (Index t = 0; t < static_cast<Index>(tets.size()); ++t) {
    const double vol = space.geometry().tets[t].volume;
    double sq = 0.0, sum = 0.0;
    for (Index v : tets[t].v) {
      sq += field[v] * field[v];
      sum += field[v];
    }
    l2 += vol / 20.0 * (sq + sum * sum);
    const Vec3 g = element_gradient(space, t, field);
    semi += vol * dot(g, g);
  }
  return {std::sqrt(l2), std::sqrt(semi), std::sqrt(l2 + semi)};
}

Norms error_norms(const P1Space& space, std::span<const double> field,
                  const std::function<double(const Vec3&)>& f,
                  const std::function<Vec3(const Vec3&)>& grad_f) {
  if (field.size() != static_cast<std::size_t>(space.num_nodes()))
    throw InputError("error_norms: field length mismatch");
  const auto& rule = tet_rule(5);
  const auto& tets = space.mesh().tets();
  double l2 = 0.0, semi = 0.0;
  for (Index t = 0; t < static_cast<Index>(tets.size()); ++t) {
    const double vol = space.geometry().tets[t].volume;
    const Vec3 gh = element_gradient(space, t, field);
    for (std::size_t q = 0; q < rule.weights.size(); ++q) {
      const auto& phi = rule.points[q];
      const Vec3 x = space.point(t, phi);
      double fh = 0.0;
      for (int k = 0; k < 4; ++k) fh += phi[k] * field[tets[t].v[k]];
      const double e = fh - f(x);
      const Vec3 ge = gh - grad_f(x);
      l2 += rule.weights[q] * vol * e * e;
      semi += rule.weights[q] * vol * dot(ge, ge);
    }
  }
  return {std::sqrt(l2), std::sqrt(semi), std::sqrt(l2 + semi)};
}

}  // namespace invadapt
