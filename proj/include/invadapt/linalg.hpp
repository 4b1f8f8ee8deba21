#pragma once

#include <span>
#include <string>
#include <vector>

#include "invadapt/sparse.hpp"

namespace invadapt {

struct KrylovOptions {
  double rel_tol = 1e-10;
  int max_iter = 5000;
};

struct KrylovResult {
  std::vector<double> x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
  std::string failure;  // empty on success; "breakdown" or "stagnation" otherwise
};

// Jacobi-preconditioned conjugate gradients for SPD operators.
KrylovResult conjugate_gradient(const SparseOperator& a, std::span<const double> b,
                                std::span<const double> x0, const KrylovOptions& options = {});

// Jacobi-preconditioned BiCGSTAB for nonsymmetric operators.
KrylovResult bicgstab(const SparseOperator& a, std::span<const double> b,
                      std::span<const double> x0, const KrylovOptions& options = {});

// LU with partial pivoting on a dense copy. Throws InputError for a singular matrix.
std::vector<double> dense_solve(const SparseOperator& a, std::span<const double> b);

double norm2(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace invadapt
