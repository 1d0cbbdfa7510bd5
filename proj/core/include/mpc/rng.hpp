#pragma once

#include <cstdint>
#include <string_view>

namespace mpc {

/// Counter-based random generator.
///
/// Algorithm (frozen): the i-th 64-bit draw of a stream with key K is
/// `mix64(K + (i + 1) * 0x9E3779B97F4A7C15)`, where mix64 is the SplitMix64
/// finalizer (xor-shift 30/27/31 with multipliers 0xBF58476D1CE4E5B9 and
/// 0x94D049BB133111EB). This is exactly SplitMix64 started at K, so any draw
/// can be computed from (key, counter) alone.
///
/// Substreams: `substream(name)` and `substream(index)` derive a new key by
/// mixing the parent key with an FNV-1a hash of the name (or the index), so
/// components such as masking and scheduled sampling never share draws.
///
/// Derived distributions avoid <random> so results are identical across
/// standard libraries:
///   uniform()      (u64 >> 11) * 2^-53, in [0, 1)
///   uniform_int(n) rejection sampling on the top bits, in [0, n)
///   normal()       Box-Muller on two uniforms, no cached spare
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  Rng substream(std::string_view name) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t z);
  static std::uint64_t fnv1a(std::string_view s);

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  struct FromKey {};
  Rng(FromKey, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mpc
