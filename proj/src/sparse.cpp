#include "invadapt/sparse.hpp"

#include <algorithm>
#include <cmath>

namespace invadapt {

SparseOperator::SparseOperator(Index rows, std::vector<Index> row_ptr, std::vector<Index> cols,
                               std::vector<double> values)
    : rows_(rows), row_ptr_(std::move(row_ptr)), cols_(std::move(cols)), values_(std::move(values)) {
  if (static_cast<Index>(row_ptr_.size()) != rows_ + 1 ||
      row_ptr_.back() != static_cast<Index>(cols_.size()))
    throw InputError("SparseOperator: inconsistent row pointers");
  if (values_.empty()) values_.assign(cols_.size(), 0.0);
  if (values_.size() != cols_.size()) throw InputError("SparseOperator: value count mismatch");
}

Index SparseOperator::find(Index i, Index j) const {
  const auto b = cols_.begin() + row_ptr_[i];
  const auto e = cols_.begin() + row_ptr_[i + 1];
  const auto it = std::lower_bound(b, e, j);
  if (it == e || *it != j) return kNoIndex;
  return static_cast<Index>(it - cols_.begin());
}

double SparseOperator::coeff(Index i, Index j) const {
  const Index p = find(i, j);
  return p == kNoIndex ? 0.0 : values_[p];
}

void SparseOperator::add(Index i, Index j, double v) {
  const Index p = find(i, j);
  if (p == kNoIndex) throw InputError("SparseOperator::add: entry outside the pattern");
  values_[p] += v;
}

void SparseOperator::multiply(std::span<const double> x, std::span<double> y) const {
  for (Index i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (Index p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) s += values_[p] * x[cols_[p]];
    y[i] = s;
  }
}

std::vector<double> SparseOperator::operator*(std::span<const double> x) const {
  std::vector<double> y(rows_);
  multiply(x, y);
  return y;
}

std::vector<double> SparseOperator::diagonal() const {
  std::vector<double> d(rows_, 0.0);
  for (Index i = 0; i < rows_; ++i) d[i] = coeff(i, i);
  return d;
}

std::vector<double> SparseOperator::row_sums() const {
  std::vector<double> s(rows_, 0.0);
  for (Index i = 0; i < rows_; ++i)
    for (Index p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) s[i] += values_[p];
  return s;
}

std::vector<double> SparseOperator::to_dense() const {
  std::vector<double> d(static_cast<std::size_t>(rows_) * rows_, 0.0);
  for (Index i = 0; i < rows_; ++i)
    for (Index p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p)
      d[static_cast<std::size_t>(i) * rows_ + cols_[p]] = values_[p];
  return d;
}

bool SparseOperator::structurally_symmetric() const {
  for (Index i = 0; i < rows_; ++i)
    for (Index p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p)
      if (find(cols_[p], i) == kNoIndex) return false;
  return true;
}

bool SparseOperator::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double SparseOperator::asymmetry() const {
  double m = 0.0;
  for (Index i = 0; i < rows_; ++i)
    for (Index p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p)
      m = std::max(m, std::abs(values_[p] - coeff(cols_[p], i)));
  return m;
}

SparseOperator& SparseOperator::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

void SparseOperator::axpy(double s, const SparseOperator& other) {
  if (other.rows_ != rows_ || other.cols_ != cols_)
    throw InputError("SparseOperator::axpy: pattern mismatch");
  for (std::size_t p = 0; p < values_.size(); ++p) values_[p] += s * other.values_[p];
}

}  // namespace invadapt
