#include "ortha/adapter.h"

#include <algorithm>

#include "ortha/error.h"
#include "ortha/rng.h"

namespace ortha {

BaseLayer make_base_layer(std::size_t d_out, std::size_t d_in, std::uint64_t seed) {
  if (d_out == 0 || d_in == 0) throw ValidationError("make_base_layer: dimensions must be positive");
  SeededRng rng(seed);
  return BaseLayer{d_out, d_in, rng_gaussian(rng, d_out, d_in, default_gaussian_sigma(d_in))};
}

ModeKind mode_kind(const BasisMode& mode) { return static_cast<ModeKind>(mode.index()); }

ModeKind parse_mode_kind(const std::string& name) {
  if (name == "shared_subset") return ModeKind::shared_subset;
  if (name == "gaussian") return ModeKind::gaussian;
  if (name == "learned_free") return ModeKind::learned_free;
  throw ValidationError("unknown adapter mode '" + name + "' (expected shared_subset, gaussian or learned_free)");
}

const char* mode_kind_name(ModeKind kind) {
  switch (kind) {
    case ModeKind::shared_subset: return "shared_subset";
    case ModeKind::gaussian: return "gaussian";
    default: return "learned_free";
  }
}

BasisMode sample_mode(ModeKind kind, std::size_t d_in, std::size_t rank, std::uint64_t basis_seed, std::uint64_t seed) {
  switch (kind) {
    case ModeKind::shared_subset:
      return SharedSubset{sample_subset_indices(d_in, rank, basis_seed, derive_seed(seed, "column_subset"))};
    case ModeKind::gaussian:
      return GaussianRandom{default_gaussian_sigma(d_in), derive_seed(seed, "gaussian_b")};
    default:
      return LearnedFree{derive_seed(seed, "learned_free_init")};
  }
}

Matrix initial_b(const BasisMode& mode, std::size_t d_in, std::size_t rank) {
  if (const auto* s = std::get_if<SharedSubset>(&mode)) {
    if (s->subset.size() != rank) {
      throw ValidationError("shared subset has " + std::to_string(s->subset.size()) + " columns but rank is " +
                            std::to_string(rank));
    }
    return subset_columns(*shared_basis(d_in, s->subset.basis_seed), s->subset);
  }
  if (const auto* g = std::get_if<GaussianRandom>(&mode)) return gaussian_b(d_in, rank, g->sigma, g->draw_seed);
  const auto& f = std::get<LearnedFree>(mode);
  return gaussian_b(d_in, rank, default_gaussian_sigma(d_in), f.init_seed);
}

Adapter new_adapter(const BaseLayer& base, std::size_t rank, const BasisMode& mode, std::uint64_t seed,
                    std::string concept_id) {
  if (rank < 1 || rank >= std::min(base.d_out, base.d_in)) {
    throw ValidationError("new_adapter: rank " + std::to_string(rank) + " must satisfy 1 <= r < min(d_out, d_in) = " +
                          std::to_string(std::min(base.d_out, base.d_in)));
  }
  Adapter ad;
  ad.concept_id = std::move(concept_id);
  ad.d_out = base.d_out;
  ad.d_in = base.d_in;
  ad.rank = rank;
  ad.a = Matrix(base.d_out, rank);
  ad.mode = mode;
  ad.b = initial_b(mode, base.d_in, rank);
  ad.meta.seed = seed;
  return ad;
}

Matrix delta(const Adapter& ad) { return mat_mult(ad.a, ad.b); }

Matrix apply(const BaseLayer& base, const Adapter& ad) {
  if (base.d_out != ad.d_out || base.d_in != ad.d_in) {
    throw ShapeError("apply: adapter " + std::to_string(ad.d_out) + "x" + std::to_string(ad.d_in) +
                     " does not match base layer " + base.w0.shape_string());
  }
  return base.w0 + delta(ad);
}

void validate_adapter(const Adapter& ad) {
  if (ad.rank < 1 || ad.rank >= std::min(ad.d_out, ad.d_in)) {
    throw ValidationError("adapter '" + ad.concept_id + "': rank " + std::to_string(ad.rank) +
                          " must satisfy 1 <= r < min(d_out, d_in)");
  }
  if (ad.a.rows() != ad.d_out || ad.a.cols() != ad.rank) {
    throw ShapeError("adapter '" + ad.concept_id + "': A is " + ad.a.shape_string() + ", expected " +
                     std::to_string(ad.d_out) + "x" + std::to_string(ad.rank));
  }
  if (ad.b.rows() != ad.d_in || ad.b.cols() != ad.rank) {
    throw ShapeError("adapter '" + ad.concept_id + "': B is " + ad.b.shape_string() + ", expected " +
                     std::to_string(ad.d_in) + "x" + std::to_string(ad.rank));
  }
  if (!all_finite(ad.a) || !all_finite(ad.b)) {
    throw ValidationError("adapter '" + ad.concept_id + "': non-finite entries");
  }
}

}  // namespace ortha
