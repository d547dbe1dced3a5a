#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace fskws {

/// Derives an independent stream seed from a master seed and a stream name.
/// Streams never share state, so consuming more numbers from one stream
/// cannot perturb another.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

/// Seeded generator with platform-independent distributions.
///
/// The standard library's distribution objects are implementation-defined,
/// so every draw here goes through our own integer/real mappings on top of
/// mt19937_64, whose output sequence is fixed by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::string_view stream) : engine_(derive_seed(master, stream)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  /// Uniform real in [0, 1) with 53 bits of resolution.
  double uniform();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fskws
