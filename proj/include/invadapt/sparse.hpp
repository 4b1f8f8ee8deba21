#pragma once

#include <span>
#include <vector>

#include "invadapt/common.hpp"

namespace invadapt {

// Compressed-row square matrix with a fixed pattern. Columns within a row are sorted.
class SparseOperator {
 public:
  SparseOperator() = default;
  SparseOperator(Index rows, std::vector<Index> row_ptr, std::vector<Index> cols,
                 std::vector<double> values = {});

  Index rows() const { return rows_; }
  std::size_t nonzeros() const { return cols_.size(); }
  const std::vector<Index>& row_ptr() const { return row_ptr_; }
  const std::vector<Index>& cols() const { return cols_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  // Position of (i, j) in values(), or kNoIndex if outside the pattern.
  Index find(Index i, Index j) const;
  double coeff(Index i, Index j) const;
  void add(Index i, Index j, double v);

  void multiply(std::span<const double> x, std::span<double> y) const;
  std::vector<double> operator*(std::span<const double> x) const;

  std::vector<double> diagonal() const;
  std::vector<double> row_sums() const;
  // Row-major dense copy.
  std::vector<double> to_dense() const;

  bool structurally_symmetric() const;
  bool all_finite() const;
  // Largest |a_ij − a_ji| over the pattern.
  double asymmetry() const;

  SparseOperator& operator*=(double s);
  // this += s·other; patterns must match.
  void axpy(double s, const SparseOperator& other);

 private:
  Index rows_ = 0;
  std::vector<Index> row_ptr_{0};
  std::vector<Index> cols_;
  std::vector<double> values_;
};

}  // namespace invadapt
