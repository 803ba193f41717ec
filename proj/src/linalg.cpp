#include "ortha/linalg.h"

#include <cmath>
#include <vector>

#include "ortha/error.h"
#include "ortha/rng.h"

namespace ortha {

Matrix orthonormalize(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw ShapeError("orthonormalize: expected a non-empty square matrix, got " + m.shape_string());
  }
  const std::size_t n = m.rows();
  const double tolerance = kRankTolerance * max_abs(m);

  Matrix r = m;
  // Householder vectors stored column-wise; v_k has support on rows k..n-1.
  std::vector<std::vector<double>> reflectors(n);
  std::vector<bool> active(n, false);
  std::vector<double> diag(n);

  for (std::size_t k = 0; k < n; ++k) {
    double tail = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) tail += r(i, k) * r(i, k);
    const double head = r(k, k);

    if (tail == 0.0) {
      diag[k] = head;
    } else {
      const double norm = std::sqrt(head * head + tail);
      const double alpha = head > 0.0 ? -norm : norm;
      std::vector<double> v(n - k);
      v[0] = head - alpha;
      for (std::size_t i = k + 1; i < n; ++i) v[i - k] = r(i, k);
      const double vnorm2 = v[0] * v[0] + tail;
      // Apply H = I - 2vvᵀ/(vᵀv) to the trailing columns.
      for (std::size_t j = k + 1; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t i = k; i < n; ++i) dot += v[i - k] * r(i, j);
        const double f = 2.0 * dot / vnorm2;
        for (std::size_t i = k; i < n; ++i) r(i, j) -= f * v[i - k];
      }
      r(k, k) = alpha;
      for (std::size_t i = k + 1; i < n; ++i) r(i, k) = 0.0;
      diag[k] = alpha;
      for (double& x : v) x /= std::sqrt(vnorm2);
      reflectors[k] = std::move(v);
      active[k] = true;
    }
    if (std::fabs(diag[k]) <= tolerance) throw RankDeficientError(k, std::fabs(diag[k]), tolerance);
  }

  // Q = H_0 H_1 ... H_{n-1}, accumulated right to left onto the identity.
  Matrix q = Matrix::identity(n);
  for (std::size_t kk = n; kk-- > 0;) {
    if (!active[kk]) continue;
    const auto& v = reflectors[kk];
    for (std::size_t j = kk; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = kk; i < n; ++i) dot += v[i - kk] * q(i, j);
      const double f = 2.0 * dot;
      for (std::size_t i = kk; i < n; ++i) q(i, j) -= f * v[i - kk];
    }
  }

  // diag(R) >= 0: flip the matching columns of Q.
  for (std::size_t k = 0; k < n; ++k) {
    if (diag[k] < 0.0) {
      for (std::size_t i = 0; i < n; ++i) q(i, k) = -q(i, k);
    }
  }
  return q;
}

Matrix cholesky_solve(const Matrix& spd, const Matrix& rhs) {
  if (spd.rows() != spd.cols()) throw ShapeError("cholesky_solve: matrix not square (" + spd.shape_string() + ")");
  if (rhs.rows() != spd.rows()) {
    throw ShapeError("cholesky_solve: rhs " + rhs.shape_string() + " does not match " + spd.shape_string());
  }
  const std::size_t n = spd.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = spd(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) throw CholeskyError(j, d);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  Matrix x = rhs;
  const std::size_t m = rhs.cols();
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

double max_eigenvalue_psd(const Matrix& sym, std::size_t iterations, std::uint64_t seed) {
  if (sym.rows() != sym.cols()) throw ShapeError("max_eigenvalue_psd: matrix not square");
  const std::size_t n = sym.rows();
  SeededRng rng(seed);
  Matrix v = rng_gaussian(rng, n, 1, 1.0);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const double norm = frobenius_norm(v);
    if (norm == 0.0) return 0.0;
    v = (1.0 / norm) * v;
    Matrix w = mat_mul(sym, v);
    lambda = 0.0;
    for (std::size_t i = 0; i < n; ++i) lambda += v(i, 0) * w(i, 0);
    v = std::move(w);
  }
  return lambda;
}

}  // namespace ortha
