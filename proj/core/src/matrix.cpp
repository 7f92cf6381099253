#include "exdrop/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace exdrop {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              a.shape_str() + " and " + b.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a) {
  throw std::invalid_argument(std::string(op) + ": bad shape " + a.shape_str());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                " does not match " + shape_str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& row : rows) {
    if (row.size() != cols_) {
      throw std::invalid_argument("Matrix: ragged initializer list");
    }
    data_.insert(data_.end(), row.begin(), row.end());
  }
}

std::string Matrix::shape_str() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Matrix::require_finite(const char* context) const {
  if (!all_finite()) {
    throw std::invalid_argument(std::string(context) + ": non-finite entry in " +
                                shape_str() + " matrix");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Matrix c(a.rows(), b.cols());
  // ikj order keeps the inner loop contiguous in both b and c.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * b.cols();
      double* crow = c.data() + i * c.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) {
        crow[j] += aik * brow[j];
      }
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      t(j, i) = a(i, j);
    }
  }
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error("add", a, b);
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error("sub", a, b);
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * s;
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error("hadamard", a, b);
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

Matrix relu(const Matrix& a) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = std::max(0.0, a.data()[i]);
  return c;
}

Matrix add_rowvec(const Matrix& x, const Matrix& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw std::invalid_argument("add_rowvec: bias " + b.shape_str() +
                                " does not broadcast over " + x.shape_str());
  }
  Matrix c(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) c(i, j) = x(i, j) + b(0, j);
  }
  return c;
}

Matrix row_softmax(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double mx = s(i, 0);
    for (std::size_t j = 1; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) {
      const double e = std::exp(s(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < s.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

Matrix row_normalize(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) sum += x(i, j);
    if (sum == 0.0) {
      throw std::invalid_argument("row_normalize: zero row sum at row " +
                                  std::to_string(i));
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / sum;
  }
  return out;
}

double trace(const Matrix& a) {
  if (a.rows() != a.cols()) shape_error("trace", a);
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

double frobenius_sq(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) t += a.data()[i] * a.data()[i];
  return t;
}

double trace_product(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows() || b.cols() != a.rows()) shape_error("trace_product", a, b);
  // tr(AB) = sum_ij A_ij B_ji; O(n^2) instead of forming AB.
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      t += a(i, j) * b(j, i);
    }
  }
  return t;
}

Matrix diag_part(const Matrix& a) {
  if (a.rows() != a.cols()) shape_error("diag_part", a);
  Matrix d(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) d(i, i) = a(i, i);
  return d;
}

Matrix diag_from_vector(const Matrix& v) {
  std::size_t n;
  if (v.rows() == 1) {
    n = v.cols();
  } else if (v.cols() == 1) {
    n = v.rows();
  } else {
    shape_error("diag_from_vector", v);
  }
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) d(i, i) = v.data()[i];
  return d;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) shape_error("layer_norm gain", x, gain);
  if (bias.rows() != 1 || bias.cols() != x.cols()) shape_error("layer_norm bias", x, bias);
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = (x(i, j) - mean) * inv * gain(0, j) + bias(0, j);
    }
  }
  return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) shape_error("vstack", top, bottom);
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data(), top.data() + top.size(), out.data());
  std::copy(bottom.data(), bottom.data() + bottom.size(), out.data() + top.size());
  return out;
}

Matrix take_row(const Matrix& a, std::size_t r) {
  if (r >= a.rows()) shape_error("take_row", a);
  Matrix out(1, a.cols());
  std::copy(a.data() + r * a.cols(), a.data() + (r + 1) * a.cols(), out.data());
  return out;
}

Matrix take_cols(const Matrix& a, std::size_t c0, std::size_t c1) {
  if (c0 >= c1 || c1 > a.cols()) shape_error("take_cols", a);
  Matrix out(a.rows(), c1 - c0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.data() + i * a.cols() + c0, a.data() + i * a.cols() + c1,
              out.data() + i * out.cols());
  }
  return out;
}

Matrix take_rows(const Matrix& a, std::size_t r0, std::size_t r1) {
  if (r0 >= r1 || r1 > a.rows()) shape_error("take_rows", a);
  Matrix out(r1 - r0, a.cols());
  std::copy(a.data() + r0 * a.cols(), a.data() + r1 * a.cols(), out.data());
  return out;
}

Matrix hstack(const Matrix& left, const Matrix& right) {
  if (left.rows() != right.rows()) shape_error("hstack", left, right);
  Matrix out(left.rows(), left.cols() + right.cols());
  for (std::size_t i = 0; i < left.rows(); ++i) {
    std::copy(left.data() + i * left.cols(), left.data() + (i + 1) * left.cols(),
              out.data() + i * out.cols());
    std::copy(right.data() + i * right.cols(), right.data() + (i + 1) * right.cols(),
              out.data() + i * out.cols() + left.cols());
  }
  return out;
}

bool allclose(const Matrix& a, const Matrix& b, double atol) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a.data()[i] - b.data()[i]) > atol) return false;
  }
  return true;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff: shapes differ, " + a.shape_str() +
                                " vs " + b.shape_str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace exdrop
