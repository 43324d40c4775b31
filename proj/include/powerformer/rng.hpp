#ifndef POWERFORMER_RNG_HPP
#define POWERFORMER_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace powerformer {

/// Deterministic random source. The engine is std::mt19937_64 (bit-portable);
/// the distributions are hand-rolled so the stream is identical across
/// standard library implementations, which keeps seeded runs reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller with a cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Index in [0, n). n must be nonzero.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace powerformer

#endif  // POWERFORMER_RNG_HPP
