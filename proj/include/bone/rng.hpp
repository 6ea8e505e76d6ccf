#pragma once

// Seeded RNG with a hand-rolled Box-Muller normal so that streams are
// reproducible across standard library implementations
// (std::normal_distribution is not portable bit-for-bit).

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace bone {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t next_u64() { return engine_(); }

  std::uint64_t uniform_int(std::uint64_t bound) { return engine_() % bound; }

  template <typename T>
  std::vector<T> normal_vec(std::size_t n, double stddev) {
    std::vector<T> out(n);
    for (auto& x : out) x = static_cast<T>(normal() * stddev);
    return out;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives a stream seed so that independent consumers (model init, adapter
// init, data generation, batch order) never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t x = base * 0x9e3779b97f4a7c15ULL + stream + 1;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace bone
