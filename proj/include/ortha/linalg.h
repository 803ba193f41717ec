#pragma once

#include <cstddef>
#include <cstdint>

#include "ortha/matrix.h"

namespace ortha {

// Relative pivot tolerance for orthonormalize: a Householder pivot below
// kRankTolerance·max|m| is treated as rank deficiency.
inline constexpr double kRankTolerance = 1e-12;

// Q of the Householder QR factorisation m = QR with diag(R) >= 0.
// m must be square. Throws RankDeficientError naming the failing column.
Matrix orthonormalize(const Matrix& m);

// Solves S·X = rhs for symmetric positive definite S via Cholesky.
// Throws CholeskyError when S is not numerically positive definite.
Matrix cholesky_solve(const Matrix& spd, const Matrix& rhs);

// Largest eigenvalue of a symmetric positive semidefinite matrix by power
// iteration from a seeded start vector.
double max_eigenvalue_psd(const Matrix& sym, std::size_t iterations = 200, std::uint64_t seed = 0x5EED);

}  // namespace ortha
