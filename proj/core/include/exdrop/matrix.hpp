#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace exdrop {

// Dense row-major matrix of doubles. The only numeric carrier in the
// library; immutable by convention once handed to another component.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

  bool all_finite() const;
  // Throws std::invalid_argument naming the context if any entry is NaN/Inf.
  void require_finite(const char* context) const;

  static Matrix identity(std::size_t n);

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Shape-checked kernels. Each throws std::invalid_argument naming the
// offending shapes on a dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix relu(const Matrix& a);
// y_ij = x_ij + b_0j for a 1 x cols row vector b.
Matrix add_rowvec(const Matrix& x, const Matrix& b);

// Row-wise softmax with per-row max subtraction; each output row sums to 1.
Matrix row_softmax(const Matrix& s);
// y_ij = x_ij / sum_k x_ik. Row sums must be nonzero.
Matrix row_normalize(const Matrix& x);

double trace(const Matrix& a);
double frobenius_sq(const Matrix& a);
// tr(a * b) without forming the product; a.cols == b.rows, b.cols == a.rows.
double trace_product(const Matrix& a, const Matrix& b);

// Zeroes every off-diagonal entry (square input).
Matrix diag_part(const Matrix& a);
// n-vector (1xn or nx1) -> n x n diagonal matrix.
Matrix diag_from_vector(const Matrix& v);

// Row-wise layer normalization: per row, subtract mean and divide by
// sqrt(var + eps), then scale by gain and shift by bias (both 1 x cols).
inline constexpr double kLayerNormEps = 1e-5;
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias);

Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix take_row(const Matrix& a, std::size_t r);
Matrix take_cols(const Matrix& a, std::size_t c0, std::size_t c1);
Matrix take_rows(const Matrix& a, std::size_t r0, std::size_t r1);
Matrix hstack(const Matrix& left, const Matrix& right);

bool allclose(const Matrix& a, const Matrix& b, double atol);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace exdrop
