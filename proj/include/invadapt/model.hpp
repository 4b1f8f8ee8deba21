#pragma once

#include <array>
#include <functional>
#include <string>

#include "invadapt/common.hpp"
#include "invadapt/state.hpp"

namespace invadapt {

// Cell diffusion d1(u, v, w). Constant by default; custom evaluators may supply partials.
class DiffusionCoefficient {
 public:
  using Value = std::function<double(double, double, double)>;
  using Partials = std::function<std::array<double, 3>(double, double, double)>;

  static DiffusionCoefficient constant(double c);
  static DiffusionCoefficient custom(Value value, Partials partials = {});

  bool is_constant() const { return constant_; }
  double constant_value() const { return c_; }
  bool has_partials() const { return constant_ || static_cast<bool>(partials_); }

  double operator()(double u, double v, double w) const { return constant_ ? c_ : value_(u, v, w); }
  // Throws InputError when no partials were supplied.
  std::array<double, 3> partials(double u, double v, double w) const;
  // Central differences of the value hook.
  std::array<double, 3> fd_partials(double u, double v, double w, double h = 1e-6) const;

 private:
  bool constant_ = true;
  double c_ = 0.0;
  Value value_;
  Partials partials_;
};

// Haptotactic sensitivity χ_u(v).
class SensitivityCoefficient {
 public:
  using Value = std::function<double(double)>;

  static SensitivityCoefficient constant(double c);
  static SensitivityCoefficient custom(Value value, Value derivative = {});

  bool is_constant() const { return constant_; }
  double constant_value() const { return c_; }
  bool has_derivative() const { return constant_ || static_cast<bool>(derivative_); }

  double operator()(double v) const { return constant_ ? c_ : value_(v); }
  double derivative(double v) const;
  double fd_derivative(double v, double h = 1e-6) const;

 private:
  bool constant_ = true;
  double c_ = 0.0;
  Value value_;
  Value derivative_;
};

struct ModelParams {
  DiffusionCoefficient d1 = DiffusionCoefficient::constant(1e-4);
  double d2 = 5e-4;
  SensitivityCoefficient chi = SensitivityCoefficient::constant(0.005);
  double lambda = 0.75;
  double rho = 1.5;
  double eta = 10.0;
  double alpha = 0.25;
  double beta = 0.1;
  double eps_ic = 0.01;

  // Throws InputError on d2 ≤ 0, negative reaction scalars or eps_ic ≤ 0.
  void validate() const;
};

// Parameter set 1 or 2 of the invasion experiments.
ModelParams parameter_set(int which);

// Pointwise initial data: u0 = exp(-r²/ε) for r ≤ 0.25 (else 0), v0 = 1 - u0/2, w0 = u0/2.
std::array<double, 3> initial_value(const Vec3& x, const ModelParams& params);

// Nodal interpolation of the initial data.
StateFields initial_conditions(const SimplicialMesh& mesh, const ModelParams& params);

// Pointwise coefficient functions and their first partials in (u, v, w).
struct ReactionTerms {
  double g1 = 0, g2 = 0, fv = 0, fw = 0;
  std::array<double, 3> dg1{}, dg2{}, dfv{}, dfw{};
};

// g1 = χ(v)u, g2 = λu(1-u-v), f_v = ρv(1-u-v) - ηvw, f_w = αu(1-w) - βw.
// `fd_chi` differentiates a custom χ hook numerically when it has no derivative.
ReactionTerms reaction_terms(double u, double v, double w, const ModelParams& params,
                             bool fd_chi = false);

// Source terms (s_u, s_v, s_w) added to the right-hand sides; empty means none.
using SourceFn = std::function<std::array<double, 3>(const Vec3&, double)>;

// Closed-form solution of the source-augmented system used for verification.
struct ManufacturedCase {
  std::string id;
  ModelParams params;
  double amplitude = 0.1;
  bool boundary_compatible = true;

  std::array<double, 3> exact(const Vec3& x, double t) const;
  std::array<Vec3, 3> exact_gradient(const Vec3& x, double t) const;
  std::array<double, 3> exact_time_derivative(const Vec3& x, double t) const;
  std::array<double, 3> source(const Vec3& x, double t) const;
  SourceFn source_fn() const;
  StateFields interpolate(const SimplicialMesh& mesh, double t) const;
};

// Reaction data of set 1 with diffusion raised to 0.1 for both species, so that the
// diffusive flux jumps dominate the residual on desk-scale meshes.
ModelParams manufactured_parameters();

// Case "A": u* = a e^{-t} cos(πx)cos(πy)cos(πz), v* = 1 - u*/2, w* = u*/2, a = 0.1.
// Requires constant coefficient hooks.
ManufacturedCase manufactured_case(const std::string& id,
                                   const ModelParams& params = manufactured_parameters());

}  // namespace invadapt
