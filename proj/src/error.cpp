#include "ortha/error.h"

#include <cstdio>

namespace ortha {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

RankDeficientError::RankDeficientError(std::size_t column, double pivot, double tolerance)
    : NumericalError("orthonormalize: rank deficient at column " + std::to_string(column) +
                     " (pivot " + fmt_double(pivot) + " below tolerance " + fmt_double(tolerance) + ")"),
      column_(column) {}

CholeskyError::CholeskyError(std::size_t row, double pivot)
    : NumericalError("cholesky: matrix not positive definite at row " + std::to_string(row) +
                     " (pivot " + fmt_double(pivot) + "); increase ridge_eps"),
      row_(row) {}

DivergenceError::DivergenceError(std::size_t step, double loss, double initial_loss)
    : NumericalError("training diverged at step " + std::to_string(step) + ": loss " + fmt_double(loss) +
                     " exceeds 1e6 x initial loss " + fmt_double(initial_loss)),
      step_(step) {}

}  // namespace ortha
