#include "invadapt/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace invadapt {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

namespace {

std::vector<double> inverse_diagonal(const SparseOperator& a) {
  auto d = a.diagonal();
  for (double& x : d) x = (x != 0.0 && std::isfinite(x)) ? 1.0 / x : 1.0;
  return d;
}

}  // namespace

KrylovResult conjugate_gradient(const SparseOperator& a, std::span<const double> b,
                                std::span<const double> x0, const KrylovOptions& options) {
  const std::size_t n = b.size();
  KrylovResult res;
  res.x.assign(x0.begin(), x0.end());
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    res.x.assign(n, 0.0);
    res.converged = true;
    return res;
  }
  const auto dinv = inverse_diagonal(a);
  std::vector<double> r(n), z(n), p(n), q(n);
  a.multiply(res.x, q);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];
  for (std::size_t i = 0; i < n; ++i) z[i] = dinv[i] * r[i];
  p = z;
  double rz = dot(r, z);
  res.relative_residual = norm2(r) / bnorm;
  while (res.relative_residual > options.rel_tol) {
    if (res.iterations >= options.max_iter) {
      res.failure = "stagnation";
      return res;
    }
    a.multiply(p, q);
    const double pq = dot(p, q);
    if (!(std::abs(pq) > 0.0)) {
      res.failure = "breakdown";
      return res;
    }
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = dinv[i] * r[i];
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    ++res.iterations;
    res.relative_residual = norm2(r) / bnorm;
  }
  res.converged = true;
  return res;
}

KrylovResult bicgstab(const SparseOperator& a, std::span<const double> b,
                      std::span<const double> x0, const KrylovOptions& options) {
  const std::size_t n = b.size();
  KrylovResult res;
  res.x.assign(x0.begin(), x0.end());
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    res.x.assign(n, 0.0);
    res.converged = true;
    return res;
  }
  const auto dinv = inverse_diagonal(a);
  std::vector<double> r(n), rhat(n), p(n, 0.0), v(n, 0.0), s(n), t(n), y(n), z(n);
  a.multiply(res.x, t);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - t[i];
  rhat = r;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  res.relative_residual = norm2(r) / bnorm;
  double best = res.relative_residual;
  int since_best = 0;
  while (res.relative_residual > options.rel_tol) {
    if (res.iterations >= options.max_iter || since_best > 200) {
      res.failure = "stagnation";
      return res;
    }
    const double rho_new = dot(rhat, r);
    if (!(std::abs(rho_new) > 1e-300) || !(std::abs(omega) > 1e-300)) {
      res.failure = "breakdown";
      return res;
    }
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    for (std::size_t i = 0; i < n; ++i) y[i] = dinv[i] * p[i];
    a.multiply(y, v);
    const double rv = dot(rhat, v);
    if (!(std::abs(rv) > 1e-300)) {
      res.failure = "breakdown";
      return res;
    }
    alpha = rho / rv;
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    ++res.iterations;
    if (norm2(s) / bnorm <= options.rel_tol) {
      for (std::size_t i = 0; i < n; ++i) res.x[i] += alpha * y[i];
      r = s;
      res.relative_residual = norm2(r) / bnorm;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = dinv[i] * s[i];
    a.multiply(z, t);
    const double tt = dot(t, t);
    if (!(tt > 0.0)) {
      res.failure = "breakdown";
      return res;
    }
    omega = dot(t, s) / tt;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * y[i] + omega * z[i];
      r[i] = s[i] - omega * t[i];
    }
    res.relative_residual = norm2(r) / bnorm;
    if (!std::isfinite(res.relative_residual)) {
      res.failure = "breakdown";
      return res;
    }
    if (res.relative_residual < 0.999 * best) {
      best = res.relative_residual;
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  // Guard against drift between the recursive and the true residual.
  a.multiply(res.x, t);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - t[i];
  res.relative_residual = norm2(r) / bnorm;
  res.converged = res.relative_residual <= 10.0 * options.rel_tol;
  if (!res.converged) res.failure = "stagnation";
  return res;
}

std::vector<double> dense_solve(const SparseOperator& a, std::span<const double> b) {
  const Index n = a.rows();
  const auto d = a.to_dense();
  Eigen::MatrixXd m(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) m(i, j) = d[static_cast<std::size_t>(i) * n + j];
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-15)) throw InputError("dense_solve: matrix is numerically singular");
  const Eigen::VectorXd x = lu.solve(Eigen::Map<const Eigen::VectorXd>(b.data(), n));
  return {x.data(), x.data() + n};
}

}  // namespace invadapt
