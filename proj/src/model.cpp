#include "invadapt/model.hpp"

#include <cmath>
#include <numbers>

namespace invadapt {

DiffusionCoefficient DiffusionCoefficient::constant(double c) {
  DiffusionCoefficient d;
  d.constant_ = true;
  d.c_ = c;
  return d;
}

DiffusionCoefficient DiffusionCoefficient::custom(Value value, Partials partials) {
  if (!value) throw InputError("DiffusionCoefficient::custom: empty value hook");
  DiffusionCoefficient d;
  d.constant_ = false;
  d.value_ = std::move(value);
  d.partials_ = std::move(partials);
  return d;
}

std::array<double, 3> DiffusionCoefficient::partials(double u, double v, double w) const {
  if (constant_) return {0.0, 0.0, 0.0};
  if (!partials_)
    throw InputError(
        "d1 hook has no partial derivatives; use the finite-difference coefficient mode");
  return partials_(u, v, w);
}

std::array<double, 3> DiffusionCoefficient::fd_partials(double u, double v, double w,
                                                        double h) const {
  if (constant_) return {0.0, 0.0, 0.0};
  return {(value_(u + h, v, w) - value_(u - h, v, w)) / (2 * h),
          (value_(u, v + h, w) - value_(u, v - h, w)) / (2 * h),
          (value_(u, v, w + h) - value_(u, v, w - h)) / (2 * h)};
}

SensitivityCoefficient SensitivityCoefficient::constant(double c) {
  SensitivityCoefficient s;
  s.constant_ = true;
  s.c_ = c;
  return s;
}

SensitivityCoefficient SensitivityCoefficient::custom(Value value, Value derivative) {
  if (!value) throw InputError("SensitivityCoefficient::custom: empty value hook");
  SensitivityCoefficient s;
  s.constant_ = false;
  s.value_ = std::move(value);
  s.derivative_ = std::move(derivative);
  return s;
}

double SensitivityCoefficient::derivative(double v) const {
  if (constant_) return 0.0;
  if (!derivative_)
    throw InputError("chi hook has no derivative; use the finite-difference coefficient mode");
  return derivative_(v);
}

double SensitivityCoefficient::fd_derivative(double v, double h) const {
  if (constant_) return 0.0;
  return (value_(v + h) - value_(v - h)) / (2 * h);
}

void ModelParams::validate() const {
  if (!(d2 > 0.0)) throw InputError("d2 must be positive");
  if (d1.is_constant() && !(d1.constant_value() > 0.0)) throw InputError("d1 must be positive");
  for (double s : {lambda, rho, eta, alpha, beta})
    if (!(s >= 0.0) || !std::isfinite(s)) throw InputError("reaction scalars must be >= 0");
  if (chi.is_constant() && !std::isfinite(chi.constant_value()))
    throw InputError("chi must be finite");
  if (!(eps_ic > 0.0)) throw InputError("eps_ic must be positive");
}

ModelParams parameter_set(int which) {
  ModelParams p;
  if (which == 1) return p;
  if (which == 2) {
    p.rho = 0.0;
    p.alpha = 0.1;
    p.beta = 0.0;
    p.chi = SensitivityCoefficient::constant(0.00005);
    return p;
  }
  throw InputError("parameter set must be 1 or 2");
}

std::array<double, 3> initial_value(const Vec3& x, const ModelParams& params) {
  const double r2 = dot(x, x);
  const double u = (r2 <= 0.0625) ? std::exp(-r2 / params.eps_ic) : 0.0;
  return {u, 1.0 - 0.5 * u, 0.5 * u};
}

StateFields initial_conditions(const SimplicialMesh& mesh, const ModelParams& params) {
  StateFields s = StateFields::zeros(mesh);
  for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
    const auto val = initial_value(mesh.vertices()[i], params);
    s.u[i] = val[0];
    s.v[i] = val[1];
    s.w[i] = val[2];
  }
  return s;
}

ReactionTerms reaction_terms(double u, double v, double w, const ModelParams& p, bool fd_chi) {
  ReactionTerms r;
  const double chi = p.chi(v);
  const double dchi = (fd_chi && !p.chi.has_derivative()) ? p.chi.fd_derivative(v) : p.chi.derivative(v);
  const double s = 1.0 - u - v;
  r.g1 = chi * u;
  r.dg1 = {chi, dchi * u, 0.0};
  r.g2 = p.lambda * u * s;
  r.dg2 = {p.lambda * (s - u), -p.lambda * u, 0.0};
  r.fv = p.rho * v * s - p.eta * v * w;
  r.dfv = {-p.rho * v, p.rho * (s - v) - p.eta * w, -p.eta * v};
  r.fw = p.alpha * u * (1.0 - w) - p.beta * w;
  r.dfw = {p.alpha * (1.0 - w), 0.0, -p.alpha * u - p.beta};
  return r;
}

ModelParams manufactured_parameters() {
  ModelParams p = parameter_set(1);
  p.d1 = DiffusionCoefficient::constant(0.1);
  p.d2 = 0.1;
  return p;
}

namespace {
constexpr double kPi = std::numbers::pi;
}

std::array<double, 3> ManufacturedCase::exact(const Vec3& x, double t) const {
  const double u = amplitude * std::exp(-t) * std::cos(kPi * x.x) * std::cos(kPi * x.y) *
                   std::cos(kPi * x.z);
  return {u, 1.0 - 0.5 * u, 0.5 * u};
}

std::array<Vec3, 3> ManufacturedCase::exact_gradient(const Vec3& x, double t) const {
  const double a = amplitude * std::exp(-t) * kPi;
  const double cx = std::cos(kPi * x.x), cy = std::cos(kPi * x.y), cz = std::cos(kPi * x.z);
  const double sx = std::sin(kPi * x.x), sy = std::sin(kPi * x.y), sz = std::sin(kPi * x.z);
  const Vec3 gu{-a * sx * cy * cz, -a * cx * sy * cz, -a * cx * cy * sz};
  return {gu, -0.5 * gu, 0.5 * gu};
}

std::array<double, 3> ManufacturedCase::exact_time_derivative(const Vec3& x, double t) const {
  const double u = exact(x, t)[0];
  return {-u, 0.5 * u, -0.5 * u};
}

std::array<double, 3> ManufacturedCase::source(const Vec3& x, double t) const {
  const auto [u, v, w] = exact(x, t);
  const Vec3 gu = exact_gradient(x, t)[0];
  const double d1 = params.d1.constant_value();
  const double chi = params.chi.constant_value();
  const double k = 3.0 * kPi * kPi;  // -Δu* = k u*
  const double su = -u + k * d1 * u - 0.5 * chi * (dot(gu, gu) - k * u * u) +
                    0.5 * params.lambda * u * u;
  const double sv = 0.5 * u + 0.5 * params.rho * v * u + params.eta * v * w;
  const double sw = -0.5 * u + 0.5 * params.d2 * k * u - params.alpha * u * (1.0 - w) +
                    params.beta * w;
  return {su, sv, sw};
}

SourceFn ManufacturedCase::source_fn() const {
  return [c = *this](const Vec3& x, double t) { return c.source(x, t); };
}

StateFields ManufacturedCase::interpolate(const SimplicialMesh& mesh, double t) const {
  StateFields s = StateFields::zeros(mesh);
  for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
    const auto e = exact(mesh.vertices()[i], t);
    s.u[i] = e[0];
    s.v[i] = e[1];
    s.w[i] = e[2];
  }
  return s;
}

ManufacturedCase manufactured_case(const std::string& id, const ModelParams& params) {
  if (id != "A" && id != "a") throw InputError("unknown manufactured case '" + id + "'");
  if (!params.d1.is_constant() || !params.chi.is_constant())
    throw InputError("manufactured case A needs constant d1 and chi");
  params.validate();
  ManufacturedCase c;
  c.id = "A";
  c.params = params;
  return c;
}

}  // namespace invadapt
