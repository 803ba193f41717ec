#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ortha {

// Dense row-major matrix of doubles. A default-constructed matrix is the
// 0x0 "empty" value; every public operation otherwise works on positive
// shapes and leaves finite entries behind (non-finite results throw).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::string shape_string() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

Matrix mat_mul(const Matrix& a, const Matrix& b);
// aᵀ·b without materialising the transpose.
Matrix mat_tmul(const Matrix& a, const Matrix& b);
// a·bᵀ without materialising the transpose.
Matrix mat_mult(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);
Matrix& operator+=(Matrix& a, const Matrix& b);
Matrix& operator-=(Matrix& a, const Matrix& b);
// a += s·b
void axpy(double s, const Matrix& b, Matrix& a);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
double trace(const Matrix& m);
bool all_finite(const Matrix& m);

// Columns `indices` of m, in the given order.
Matrix select_columns(const Matrix& m, std::span<const std::size_t> indices);
Matrix hcat(const Matrix& a, const Matrix& b);

// Throws ShapeError naming both operand shapes.
void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

}  // namespace ortha
