#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

#include "ortha/matrix.h"

namespace ortha {

// One step of the splitmix64 sequence; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);
// Stateless splitmix64 finaliser.
std::uint64_t mix64(std::uint64_t x);

// Child seed for (root, purpose, index). FNV-1a over the purpose bytes,
// then splitmix finalisation. Stable across platforms and releases.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

// xoshiro256** seeded through splitmix64. Single owner; never share a
// generator between threads, derive a fresh seed instead.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits. One raw draw.
  double uniform();
  // Uniform integer on [0, bound) by rejection; bound > 0.
  std::uint64_t uniform_below(std::uint64_t bound);
  // Box–Muller pair of independent standard normals. Exactly two raw draws.
  std::array<double, 2> gaussian_pair();

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
};

// rows×cols matrix with i.i.d. N(0, sigma²) entries filled row-major from
// Box–Muller pairs. Consumes 2·ceil(rows·cols/2) raw draws regardless of
// sigma; with an odd count the final sine sample is discarded.
Matrix rng_gaussian(SeededRng& rng, std::size_t rows, std::size_t cols, double sigma);

}  // namespace ortha
