#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "genholdout/errors.hpp"

namespace genholdout {

/// Identity of the pseudo-randomness scheme, recorded in every output file.
/// Streams are addressed as (root_seed, path); the key for a path is derived
/// by chaining the splitmix64 finalizer over the path labels, and the keyed
/// stream itself is xoshiro256++. All derivation is pure integer arithmetic,
/// so stream identity is bit-stable across platforms.
inline constexpr std::string_view kPrngId = "splitmix64-path/xoshiro256++/v1";

namespace detail {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Materialized generator state (xoshiro256++). Cheap to construct from a
/// 64-bit key; never shared between threads.
class RngEngine {
public:
  using result_type = std::uint64_t;

  explicit RngEngine(std::uint64_t key) {
    // Standard splitmix64 expansion of the key into the four state words.
    std::uint64_t sm = key;
    for (auto& word : state_) {
      sm += 0x9e3779b97f4a7c15ull;
      word = detail::mix64(sm - 0x9e3779b97f4a7c15ull);
    }
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~std::uint64_t{0}; }

  std::uint64_t operator()() {
    const std::uint64_t result = detail::rotl64(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl64(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Unbiased uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw DomainError("RngEngine::below: bound must be positive");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = (*this)();
      if (r >= threshold) return r % bound;
    }
  }

  /// Standard normal via the Marsaglia polar method (one spare cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Centered Laplace draw with the given scale (scale 0 gives 0).
  double laplace(double scale) {
    double u;
    do {
      u = uniform() - 0.5;
    } while (u == -0.5);
    const double mag = -std::log1p(-2.0 * std::abs(u));
    return (u < 0 ? -scale : scale) * mag;
  }

private:
  std::uint64_t state_[4]{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Address of a reproducible randomness stream: a root seed plus a path of
/// substream labels. Values are immutable; deriving a child never perturbs
/// the parent, so independent components can carve out independent streams
/// without coordination.
class RngStream {
public:
  explicit RngStream(std::uint64_t root_seed) : root_seed_(root_seed), key_(detail::mix64(root_seed)) {}

  RngStream child(std::uint64_t label) const {
    RngStream out = *this;
    out.path_.push_back(label);
    out.key_ = detail::mix64(out.key_ ^ detail::mix64(label + 0x632be59bd9b4e019ull));
    return out;
  }

  RngStream child(std::initializer_list<std::uint64_t> labels) const {
    RngStream out = *this;
    for (auto l : labels) out = out.child(l);
    return out;
  }

  std::uint64_t root_seed() const { return root_seed_; }
  const std::vector<std::uint64_t>& path() const { return path_; }
  std::uint64_t key() const { return key_; }

  RngEngine engine() const { return RngEngine(key_); }

private:
  std::uint64_t root_seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t key_;
};

}  // namespace genholdout
