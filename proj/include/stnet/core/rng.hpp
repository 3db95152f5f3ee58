#ifndef STNET_CORE_RNG_HPP
#define STNET_CORE_RNG_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stnet {

/// Deterministic random stream.
///
/// Wraps std::mt19937_64 but implements its own uniform/normal/bounded-int
/// draws so every sample is a pure function of the engine state, independent
/// of standard-library distribution internals. State round-trips through a
/// string for checkpoint/resume.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Derive an independent stream from a master seed and a stream label.
  static Rng derive(uint64_t master_seed, const std::string& stream);

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform();

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n-1]; n must be >= 1. Unbiased (rejection).
  int64_t below(int64_t n);

  /// Uniform integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi) { return lo + below(hi - lo + 1); }

  /// Standard normal via Box-Muller (stateless: consumes two u64 per draw).
  double normal();

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
    }
  }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

/// 64-bit FNV-1a over a byte buffer; used for parameter checksums.
uint64_t fnv1a64(const void* bytes, size_t n, uint64_t seed = 1469598103934665603ull);

}  // namespace stnet

#endif
