#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>
#include <variant>
#include <vector>

#include "ortha/matrix.h"

namespace ortha {

// Seeded n×n orthogonal matrix shared by every concept of input width n.
// Regenerated on demand from (dim, seed); never persisted.
struct SharedBasis {
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  Matrix ortho;
};

// k distinct column indices of a shared basis, strictly increasing.
struct ColumnSubset {
  std::uint64_t basis_seed = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
  bool operator==(const ColumnSubset&) const = default;
};

// Frozen B drawn as columns of the shared basis.
struct SharedSubset {
  ColumnSubset subset;
  bool operator==(const SharedSubset&) const = default;
};

// Frozen B with i.i.d. N(0, sigma²) entries.
struct GaussianRandom {
  double sigma = 0.0;
  std::uint64_t draw_seed = 0;
  bool operator==(const GaussianRandom&) const = default;
};

// Conventional low-rank baseline: B is trainable, initialised Gaussian.
struct LearnedFree {
  std::uint64_t init_seed = 0;
  bool operator==(const LearnedFree&) const = default;
};

using BasisMode = std::variant<SharedSubset, GaussianRandom, LearnedFree>;

const char* mode_name(const BasisMode& mode);
bool is_frozen(const BasisMode& mode);

struct CollisionStats {
  std::size_t n = 0;
  std::size_t k = 0;
  double expected_overlap = 0.0;  // k²/n
  double p_disjoint = 0.0;
};

// orthonormalize(rng_gaussian(SeededRng(seed), n, n, 1)). n >= 2.
SharedBasis generate_shared_basis(std::size_t n, std::uint64_t seed);

// Process-wide memoised generate_shared_basis. Thread-safe.
std::shared_ptr<const SharedBasis> shared_basis(std::size_t n, std::uint64_t seed);

// k indices uniformly without replacement (partial Fisher–Yates), sorted.
ColumnSubset sample_subset_indices(std::size_t n, std::size_t k, std::uint64_t basis_seed, std::uint64_t seed);

// Subset plus the corresponding n×k block of basis columns. 1 <= k < n.
std::pair<ColumnSubset, Matrix> sample_column_subset(const SharedBasis& basis, std::size_t k, std::uint64_t seed);

// Columns of the basis named by `subset`; validates provenance and range.
Matrix subset_columns(const SharedBasis& basis, const ColumnSubset& subset);

CollisionStats collision_stats(std::size_t n, std::size_t k);

inline double default_gaussian_sigma(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

// n×r with i.i.d. N(0, sigma²) entries. r < n, sigma > 0.
Matrix gaussian_b(std::size_t n, std::size_t r, double sigma, std::uint64_t seed);

// Basis columns not in `excluded`, in index order.
Matrix complement_columns(const SharedBasis& basis, const ColumnSubset& excluded);

// ‖b_iᵀ b_j‖_F.
double basis_crosstalk(const Matrix& b_i, const Matrix& b_j);

// Two r-column subsets sharing exactly `shared` columns; requires 2r - shared <= n.
std::pair<ColumnSubset, ColumnSubset> overlapping_subsets(std::size_t n, std::size_t r, std::size_t shared,
                                                          std::uint64_t basis_seed, std::uint64_t seed);

// `count` mutually disjoint r-column subsets; requires count·r <= n.
std::vector<ColumnSubset> disjoint_subsets(std::size_t n, std::size_t r, std::size_t count,
                                           std::uint64_t basis_seed, std::uint64_t seed);

// Sorted union of several subsets' indices (provenance taken from the first).
ColumnSubset subset_union(const std::vector<const ColumnSubset*>& subsets);

}  // namespace ortha
