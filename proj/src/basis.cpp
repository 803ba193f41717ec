#include "ortha/basis.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

#include "ortha/error.h"
#include "ortha/linalg.h"
#include "ortha/rng.h"

namespace ortha {

namespace {

void require_k_below_n(std::size_t n, std::size_t k, const char* op) {
  if (k < 1 || k >= n) {
    throw ValidationError(std::string(op) + ": need 1 <= k < n, got k=" + std::to_string(k) +
                          ", n=" + std::to_string(n));
  }
}

// First `take` entries of a partial Fisher–Yates shuffle of 0..n-1.
std::vector<std::size_t> partial_shuffle(std::size_t n, std::size_t take, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SeededRng rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(n - i));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(take);
  return perm;
}

ColumnSubset make_subset(std::uint64_t basis_seed, std::vector<std::size_t> indices) {
  std::sort(indices.begin(), indices.end());
  return ColumnSubset{basis_seed, std::move(indices)};
}

void validate_subset(const ColumnSubset& subset, std::size_t n, const char* op) {
  for (std::size_t i = 0; i < subset.indices.size(); ++i) {
    if (subset.indices[i] >= n) {
      throw ValidationError(std::string(op) + ": column index " + std::to_string(subset.indices[i]) +
                            " out of range for dimension " + std::to_string(n));
    }
    if (i > 0 && subset.indices[i] <= subset.indices[i - 1]) {
      throw ValidationError(std::string(op) + ": column indices must be strictly increasing");
    }
  }
}

}  // namespace

const char* mode_name(const BasisMode& mode) {
  switch (mode.index()) {
    case 0: return "shared_subset";
    case 1: return "gaussian";
    default: return "learned_free";
  }
}

bool is_frozen(const BasisMode& mode) { return !std::holds_alternative<LearnedFree>(mode); }

SharedBasis generate_shared_basis(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ValidationError("generate_shared_basis: dimension must be >= 2, got " + std::to_string(n));
  SeededRng rng(seed);
  return SharedBasis{n, seed, orthonormalize(rng_gaussian(rng, n, n, 1.0))};
}

std::shared_ptr<const SharedBasis> shared_basis(std::size_t n, std::uint64_t seed) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::uint64_t>, std::shared_ptr<const SharedBasis>> cache;
  const auto key = std::make_pair(n, seed);
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto basis = std::make_shared<const SharedBasis>(generate_shared_basis(n, seed));
  std::lock_guard lock(mutex);
  return cache.emplace(key, std::move(basis)).first->second;
}

ColumnSubset sample_subset_indices(std::size_t n, std::size_t k, std::uint64_t basis_seed, std::uint64_t seed) {
  require_k_below_n(n, k, "sample_column_subset");
  return make_subset(basis_seed, partial_shuffle(n, k, seed));
}

std::pair<ColumnSubset, Matrix> sample_column_subset(const SharedBasis& basis, std::size_t k, std::uint64_t seed) {
  ColumnSubset subset = sample_subset_indices(basis.dim, k, basis.seed, seed);
  Matrix b = select_columns(basis.ortho, subset.indices);
  return {std::move(subset), std::move(b)};
}

Matrix subset_columns(const SharedBasis& basis, const ColumnSubset& subset) {
  validate_subset(subset, basis.dim, "subset_columns");
  if (subset.basis_seed != basis.seed) {
    throw ValidationError("subset_columns: subset was drawn for basis seed " + std::to_string(subset.basis_seed) +
                          ", not " + std::to_string(basis.seed));
  }
  return select_columns(basis.ortho, subset.indices);
}

CollisionStats collision_stats(std::size_t n, std::size_t k) {
  require_k_below_n(n, k, "collision_stats");
  const double nd = static_cast<double>(n);
  const double kd = static_cast<double>(k);
  CollisionStats stats{n, k, kd * kd / nd, 0.0};
  if (2 * k > n) return stats;  // pigeonhole: two k-subsets must meet
  double log_p = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    log_p += std::log(static_cast<double>(n - k - i)) - std::log(static_cast<double>(n - i));
  }
  stats.p_disjoint = std::exp(log_p);
  return stats;
}

Matrix gaussian_b(std::size_t n, std::size_t r, double sigma, std::uint64_t seed) {
  require_k_below_n(n, r, "gaussian_b");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("gaussian_b: sigma must be > 0");
  SeededRng rng(seed);
  return rng_gaussian(rng, n, r, sigma);
}

Matrix complement_columns(const SharedBasis& basis, const ColumnSubset& excluded) {
  validate_subset(excluded, basis.dim, "complement_columns");
  if (excluded.size() >= basis.dim) {
    throw ValidationError("complement_columns: excluded set covers every basis column");
  }
  std::vector<std::size_t> keep;
  keep.reserve(basis.dim - excluded.size());
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < basis.dim; ++c) {
    if (cursor < excluded.size() && excluded.indices[cursor] == c) {
      ++cursor;
      continue;
    }
    keep.push_back(c);
  }
  return select_columns(basis.ortho, keep);
}

double basis_crosstalk(const Matrix& b_i, const Matrix& b_j) {
  if (b_i.rows() != b_j.rows()) {
    throw ShapeError("basis_crosstalk: row counts differ (" + b_i.shape_string() + " vs " + b_j.shape_string() + ")");
  }
  return frobenius_norm(mat_tmul(b_i, b_j));
}

std::pair<ColumnSubset, ColumnSubset> overlapping_subsets(std::size_t n, std::size_t r, std::size_t shared,
                                                          std::uint64_t basis_seed, std::uint64_t seed) {
  if (shared > r) throw ValidationError("overlapping_subsets: shared columns exceed rank");
  const std::size_t needed = 2 * r - shared;
  if (r < 1 || needed > n) {
    throw ValidationError("overlapping_subsets: " + std::to_string(needed) + " distinct columns needed but basis has " +
                          std::to_string(n));
  }
  const auto perm = partial_shuffle(n, needed, seed);
  std::vector<std::size_t> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(r));
  std::vector<std::size_t> second(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(shared));
  second.insert(second.end(), perm.begin() + static_cast<std::ptrdiff_t>(r), perm.end());
  return {make_subset(basis_seed, std::move(first)), make_subset(basis_seed, std::move(second))};
}

std::vector<ColumnSubset> disjoint_subsets(std::size_t n, std::size_t r, std::size_t count,
                                           std::uint64_t basis_seed, std::uint64_t seed) {
  if (r < 1 || count * r > n) {
    throw ValidationError("disjoint_subsets: " + std::to_string(count) + " subsets of rank " + std::to_string(r) +
                          " need " + std::to_string(count * r) + " columns but basis has " + std::to_string(n));
  }
  const auto perm = partial_shuffle(n, count * r, seed);
  std::vector<ColumnSubset> out;
  out.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    auto first = perm.begin() + static_cast<std::ptrdiff_t>(c * r);
    out.push_back(make_subset(basis_seed, std::vector<std::size_t>(first, first + static_cast<std::ptrdiff_t>(r))));
  }
  return out;
}

ColumnSubset subset_union(const std::vector<const ColumnSubset*>& subsets) {
  std::vector<std::size_t> all;
  for (const auto* s : subsets) all.insert(all.end(), s->indices.begin(), s->indices.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return ColumnSubset{subsets.empty() ? 0 : subsets.front()->basis_seed, std::move(all)};
}

}  // namespace ortha
