#include "diffcl/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/fmt/fmt.h>

#include "diffcl/error.hpp"

namespace diffcl {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError(fmt::format("DenseMatrix: {} values for a {}x{} matrix",
                                 data_.size(), rows, cols));
  }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void DenseMatrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<Triplet> entries) {
  for (const auto& e : entries) {
    if (e.row >= rows || e.col >= cols) {
      throw ShapeError(fmt::format("SparseMatrix: entry ({}, {}) outside {}x{}", e.row,
                                   e.col, rows, cols));
    }
    if (!std::isfinite(e.weight)) {
      throw DataError(fmt::format("SparseMatrix: non-finite weight at ({}, {})", e.row, e.col));
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (std::size_t k = 1; k < entries.size(); ++k) {
    if (entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col) {
      throw ShapeError(fmt::format("SparseMatrix: duplicate entry ({}, {})", entries[k].row,
                                   entries[k].col));
    }
  }

  SparseMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.row_offsets_.assign(rows + 1, 0);
  m.col_index_.reserve(entries.size());
  m.weights_.reserve(entries.size());
  for (const auto& e : entries) {
    ++m.row_offsets_[e.row + 1];
    m.col_index_.push_back(e.col);
    m.weights_.push_back(e.weight);
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_offsets_[r + 1] += m.row_offsets_[r];
  return m;
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<Triplet> entries;
  entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) entries.push_back({i, i, 1.0});
  return from_triplets(n, n, std::move(entries));
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  const auto begin = col_index_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r]);
  const auto end = col_index_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r + 1]);
  const auto it = std::lower_bound(begin, end, c);
  if (it == end || *it != c) return 0.0;
  return weights_[static_cast<std::size_t>(it - col_index_.begin())];
}

bool SparseMatrix::contains(std::size_t r, std::size_t c) const {
  const auto begin = col_index_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r]);
  const auto end = col_index_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r + 1]);
  return std::binary_search(begin, end, c);
}

std::vector<Triplet> SparseMatrix::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      out.push_back({r, col_index_[k], weights_[k]});
    }
  }
  return out;
}

SparseMatrix SparseMatrix::transpose() const {
  auto entries = triplets();
  for (auto& e : entries) std::swap(e.row, e.col);
  return from_triplets(cols_, rows_, std::move(entries));
}

DenseMatrix SparseMatrix::to_dense() const {
  DenseMatrix out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      out(r, col_index_[k]) = weights_[k];
    }
  }
  return out;
}

DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError(fmt::format("spmm: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(),
                                 b.cols()));
  }
  DenseMatrix c(a.rows(), b.cols());
  const auto offsets = a.row_offsets();
  const auto cols = a.col_indices();
  const auto w = a.weights();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) {
      const auto src = b.row(cols[k]);
      const double weight = w[k];
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += weight * src[j];
    }
  }
  return c;
}

DenseMatrix spmm_transposed(const SparseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError(fmt::format("spmm_transposed: ({}x{})^T times {}x{}", a.rows(), a.cols(),
                                 b.rows(), b.cols()));
  }
  DenseMatrix c(a.cols(), b.cols());
  const auto offsets = a.row_offsets();
  const auto cols = a.col_indices();
  const auto w = a.weights();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto src = b.row(i);
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) {
      auto out = c.row(cols[k]);
      const double weight = w[k];
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += weight * src[j];
    }
  }
  return c;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError(fmt::format("matmul: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(),
                                 b.cols()));
  }
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError(fmt::format("matmul_tn: ({}x{})^T times {}x{}", a.rows(), a.cols(),
                                 b.rows(), b.cols()));
  }
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      auto out = c.row(i);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += aki * brow[j];
    }
  }
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError(fmt::format("matmul_nt: {}x{} times ({}x{})^T", a.rows(), a.cols(),
                                 b.rows(), b.cols()));
  }
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  }
  return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(fmt::format("{}: {}x{} vs {}x{}", what, a.rows(), a.cols(), b.rows(),
                                 b.cols()));
  }
}

void add_scaled(DenseMatrix& a, const DenseMatrix& b, double scale) {
  require_same_shape(a, b, "add_scaled");
  auto av = a.values();
  const auto bv = b.values();
  for (std::size_t k = 0; k < av.size(); ++k) av[k] += scale * bv[k];
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c = a;
  add_scaled(c, b, 1.0);
  return c;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c = a;
  add_scaled(c, b, -1.0);
  return c;
}

DenseMatrix scaled(const DenseMatrix& a, double s) {
  DenseMatrix c = a;
  for (double& v : c.values()) v *= s;
  return c;
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "hadamard");
  DenseMatrix c = a;
  auto cv = c.values();
  const auto bv = b.values();
  for (std::size_t k = 0; k < cv.size(); ++k) cv[k] *= bv[k];
  return c;
}

void add_row_broadcast(DenseMatrix& a, const DenseMatrix& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError(fmt::format("add_row_broadcast: bias {}x{} for {} columns", bias.rows(),
                                 bias.cols(), a.cols()));
  }
  const auto b = bias.row(0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
}

DenseMatrix column_sums(const DenseMatrix& a) {
  DenseMatrix s(1, a.cols());
  auto out = s.row(0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError(fmt::format("dot: lengths {} and {}", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double frobenius_sq(const DenseMatrix& a) { return squared_norm(a.values()); }

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t k = 0; k < av.size(); ++k) m = std::max(m, std::abs(av[k] - bv[k]));
  return m;
}

DenseMatrix vstack(const DenseMatrix& top, const DenseMatrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw ShapeError(fmt::format("vstack: {} vs {} columns", top.cols(), bottom.cols()));
  }
  std::vector<double> data;
  data.reserve(top.size() + bottom.size());
  data.insert(data.end(), top.values().begin(), top.values().end());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return DenseMatrix(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

DenseMatrix hstack(const DenseMatrix& left, const DenseMatrix& right) {
  if (left.rows() != right.rows()) {
    throw ShapeError(fmt::format("hstack: {} vs {} rows", left.rows(), right.rows()));
  }
  DenseMatrix out(left.rows(), left.cols() + right.cols());
  for (std::size_t i = 0; i < left.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(left.row(i).begin(), left.row(i).end(), dst.begin());
    std::copy(right.row(i).begin(), right.row(i).end(),
              dst.begin() + static_cast<std::ptrdiff_t>(left.cols()));
  }
  return out;
}

DenseMatrix slice_rows(const DenseMatrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw ShapeError(fmt::format("slice_rows: [{}, {}) of {} rows", begin, begin + count,
                                 a.rows()));
  }
  const auto first = a.values().begin() + static_cast<std::ptrdiff_t>(begin * a.cols());
  return DenseMatrix(count, a.cols(),
                     std::vector<double>(first, first + static_cast<std::ptrdiff_t>(
                                                            count * a.cols())));
}

DenseMatrix gather_rows(const DenseMatrix& a, std::span<const std::size_t> indices) {
  DenseMatrix out(indices.size(), a.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= a.rows()) {
      throw ShapeError(fmt::format("gather_rows: row {} of {}", indices[k], a.rows()));
    }
    const auto src = a.row(indices[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

void scatter_add_rows(DenseMatrix& dst, std::span<const std::size_t> indices,
                      const DenseMatrix& src) {
  if (src.rows() != indices.size() || src.cols() != dst.cols()) {
    throw ShapeError("scatter_add_rows: shape mismatch");
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= dst.rows()) {
      throw ShapeError(fmt::format("scatter_add_rows: row {} of {}", indices[k], dst.rows()));
    }
    auto out = dst.row(indices[k]);
    const auto in = src.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += in[j];
  }
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace diffcl
