#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "ortha/basis.h"
#include "ortha/matrix.h"

namespace ortha {

// Pre-trained weights of one linear layer, W0 ∈ R^{d_out×d_in}.
struct BaseLayer {
  std::size_t d_out = 0;
  std::size_t d_in = 0;
  Matrix w0;
};

// Seeded base layer with N(0, 1/d_in) entries.
BaseLayer make_base_layer(std::size_t d_out, std::size_t d_in, std::uint64_t seed);

struct AdapterMeta {
  std::string layer_id;
  std::uint64_t seed = 0;       // seed passed to new_adapter
  std::uint64_t task_seed = 0;  // seed of the task it was fitted to
  std::uint64_t steps = 0;
  double final_loss = 0.0;
  bool operator==(const AdapterMeta&) const = default;
};

// One concept's residual ΔW = A·Bᵀ on one layer. B is frozen unless the
// mode is LearnedFree.
struct Adapter {
  std::string concept_id;
  std::size_t d_out = 0;
  std::size_t d_in = 0;
  std::size_t rank = 0;
  Matrix a;  // d_out × r
  BasisMode mode;
  Matrix b;  // d_in × r
  AdapterMeta meta;

  bool operator==(const Adapter&) const = default;
};

enum class ModeKind { shared_subset, gaussian, learned_free };

ModeKind mode_kind(const BasisMode& mode);
ModeKind parse_mode_kind(const std::string& name);
const char* mode_kind_name(ModeKind kind);

// Draws the mode payload for a fresh adapter from `seed`: a random
// r-column subset of the (d_in, basis_seed) shared basis, a Gaussian draw
// seed with sigma = 1/√d_in, or a LearnedFree init seed.
BasisMode sample_mode(ModeKind kind, std::size_t d_in, std::size_t rank, std::uint64_t basis_seed, std::uint64_t seed);

// The B a mode prescribes before any training.
Matrix initial_b(const BasisMode& mode, std::size_t d_in, std::size_t rank);

// Zero-initialised A with B built from `mode`. Requires r < min(d_out, d_in).
Adapter new_adapter(const BaseLayer& base, std::size_t rank, const BasisMode& mode, std::uint64_t seed,
                    std::string concept_id = {});

// A·Bᵀ, d_out × d_in.
Matrix delta(const Adapter& ad);

// W0 + A·Bᵀ.
Matrix apply(const BaseLayer& base, const Adapter& ad);

// Shape and mode consistency; throws ValidationError.
void validate_adapter(const Adapter& ad);

}  // namespace ortha
