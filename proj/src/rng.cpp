#include "ortha/rng.h"

#include <cmath>
#include <numbers>

#include "ortha/error.h"

namespace ortha {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  return mix64(state);
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  std::uint64_t state = root;
  std::uint64_t out = splitmix64(state) ^ mix64(h);
  out = mix64(out + 0x9E3779B97F4A7C15ULL * (index + 1));
  return out;
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t SeededRng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::uniform_below(std::uint64_t bound) {
  if (bound == 0) throw ValidationError("uniform_below: bound must be positive");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) return x % bound;
  }
}

std::array<double, 2> SeededRng::gaussian_pair() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

Matrix rng_gaussian(SeededRng& rng, std::size_t rows, std::size_t cols, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ValidationError("rng_gaussian: sigma must be finite and >= 0");
  }
  Matrix out(rows, cols);
  auto values = out.values();
  for (std::size_t i = 0; i < values.size(); i += 2) {
    const auto pair = rng.gaussian_pair();
    values[i] = sigma * pair[0];
    if (i + 1 < values.size()) values[i + 1] = sigma * pair[1];
  }
  return out;
}

}  // namespace ortha
