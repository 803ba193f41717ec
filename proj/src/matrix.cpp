#include "ortha/matrix.h"

#include <cmath>

#include "ortha/error.h"

namespace ortha {

namespace {

std::string shape_of(const Matrix& m) { return m.shape_string(); }

void check_finite(const Matrix& m, const char* op) {
  if (!all_finite(m)) throw NumericalError(std::string(op) + ": result has non-finite entries");
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError("matrix: " + std::to_string(values_.size()) + " values for shape " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  values_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("matrix: ragged initializer");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix mat_mul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("mat_mul: inner dimensions differ (" + shape_of(a) + " times " + shape_of(b) + ")");
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = &out(i, 0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* src = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) dst[j] += aik * src[j];
    }
  }
  check_finite(out, "mat_mul");
  return out;
}

Matrix mat_tmul(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("mat_tmul: row counts differ (" + shape_of(a) + "ᵀ times " + shape_of(b) + ")");
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* dst = &out(i, 0);
      for (std::size_t j = 0; j < n; ++j) dst[j] += aki * brow[j];
    }
  }
  check_finite(out, "mat_tmul");
  return out;
}

Matrix mat_mult(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("mat_mult: column counts differ (" + shape_of(a) + " times " + shape_of(b) + "ᵀ)");
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j).data();
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      out(i, j) = acc;
    }
  }
  check_finite(out, "mat_mult");
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + shape_of(a) + " vs " + shape_of(b) + ")");
  }
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  out += b;
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  out -= b;
  return out;
}

Matrix operator*(double s, const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v *= s;
  check_finite(out, "scale");
  return out;
}

Matrix& operator+=(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  check_finite(a, "add");
  return a;
}

Matrix& operator-=(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  check_finite(a, "subtract");
  return a;
}

void axpy(double s, const Matrix& b, Matrix& a) {
  require_same_shape(a, b, "axpy");
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
  check_finite(a, "axpy");
}

double frobenius_norm(const Matrix& m) {
  // Scaled accumulation avoids overflow for large entries.
  double scale = 0.0;
  double ssq = 1.0;
  for (double v : m.values()) {
    if (v == 0.0) continue;
    const double a = std::fabs(v);
    if (scale < a) {
      ssq = 1.0 + ssq * (scale / a) * (scale / a);
      scale = a;
    } else {
      ssq += (a / scale) * (a / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

double max_abs(const Matrix& m) {
  double out = 0.0;
  for (double v : m.values()) out = std::max(out, std::fabs(v));
  return out;
}

double trace(const Matrix& m) {
  double out = 0.0;
  const std::size_t n = std::min(m.rows(), m.cols());
  for (std::size_t i = 0; i < n; ++i) out += m(i, i);
  return out;
}

bool all_finite(const Matrix& m) {
  for (double v : m.values())
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix select_columns(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(m.rows(), indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= m.cols()) {
      throw ShapeError("select_columns: index " + std::to_string(indices[j]) + " out of range for " +
                       shape_of(m));
    }
    for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = m(i, indices[j]);
  }
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("hcat: row counts differ (" + shape_of(a) + " vs " + shape_of(b) + ")");
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

}  // namespace ortha
