#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace diffcl {

/// Seeded random stream with purpose-keyed substreams.
///
/// Every stream is identified by a 64-bit key. The root key is the run
/// seed; a substream key is SplitMix64(parent_key XOR FNV-1a(purpose)) for
/// string purposes and SplitMix64(parent_key + golden_ratio * (index + 1))
/// for integer indices. Keys depend only on the derivation path, never on
/// how many draws a sibling stream has made, so adding a consumer does not
/// perturb any other stream.
///
/// Draws come from std::mt19937_64 seeded with the key. Uniform doubles use
/// the top 53 bits of one engine output; normals use Box-Muller and cache
/// the second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng substream(std::string_view purpose) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Standard normal.
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// True with probability p.
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace diffcl
