#pragma once

#include <cstdint>
#include <random>

namespace roslac {

/// Portable random source: std::mt19937_64 (bit-specified by the standard)
/// with hand-written uniform and normal transforms, since the standard
/// distributions differ between library implementations.
///
/// uniform():  top 53 bits of one engine output scaled by 2⁻⁵³, in [0, 1).
/// normal():   Box–Muller on two uniforms, both outputs used in turn.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// SplitMix64 finalizer, used to derive independent sub-seeds from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace roslac
