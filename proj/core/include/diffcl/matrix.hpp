#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace diffcl {

/// Row-major matrix of 64-bit floats.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double value);
  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Triplet {
  std::size_t row;
  std::size_t col;
  double weight;
};

/// Compressed-sparse-row matrix. Built from triplets; entries within a row
/// are stored in ascending column order, so iteration order is fixed.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  /// Throws ShapeError on out-of-range indices or duplicate (row, col)
  /// pairs and DataError on non-finite weights.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> entries);
  static SparseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return col_index_.size(); }

  std::span<const std::size_t> row_offsets() const { return row_offsets_; }
  std::span<const std::size_t> col_indices() const { return col_index_; }
  std::span<const double> weights() const { return weights_; }

  /// Number of stored entries in row r.
  std::size_t row_nnz(std::size_t r) const { return row_offsets_[r + 1] - row_offsets_[r]; }
  /// Stored weight at (r, c), or 0 if absent.
  double at(std::size_t r, std::size_t c) const;
  bool contains(std::size_t r, std::size_t c) const;

  std::vector<Triplet> triplets() const;
  SparseMatrix transpose() const;
  DenseMatrix to_dense() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_offsets_{0};
  std::vector<std::size_t> col_index_;
  std::vector<double> weights_;
};

// C = A * B. Throws ShapeError when A.cols != B.rows.
DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& b);
// C = A^T * B.
DenseMatrix spmm_transposed(const SparseMatrix& a, const DenseMatrix& b);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// a^T * b
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
// a * b^T
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);

// a += scale * b
void add_scaled(DenseMatrix& a, const DenseMatrix& b, double scale = 1.0);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scaled(const DenseMatrix& a, double s);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);
// Adds a 1 x cols bias row to every row of a.
void add_row_broadcast(DenseMatrix& a, const DenseMatrix& bias);
// 1 x cols column sums.
DenseMatrix column_sums(const DenseMatrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double frobenius_sq(const DenseMatrix& a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix vstack(const DenseMatrix& top, const DenseMatrix& bottom);
DenseMatrix slice_rows(const DenseMatrix& a, std::size_t begin, std::size_t count);
DenseMatrix gather_rows(const DenseMatrix& a, std::span<const std::size_t> indices);
// dst[indices[k]] += src[k]
void scatter_add_rows(DenseMatrix& dst, std::span<const std::size_t> indices,
                      const DenseMatrix& src);
// Horizontal concatenation.
DenseMatrix hstack(const DenseMatrix& left, const DenseMatrix& right);

double log_sum_exp(std::span<const double> values);
// log(1 + exp(x)) without overflow.
double softplus(double x);
double sigmoid(double x);

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what);

}  // namespace diffcl
