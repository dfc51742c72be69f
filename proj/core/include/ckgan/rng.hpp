#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace ckgan {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic random stream. Streams derived from the same master seed but
/// different labels are independent, so consumers (data, noise, init, gp
/// interpolation, eval) cannot perturb each other.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng stream(std::uint64_t master_seed, const std::string& label) {
    return Rng(splitmix64(master_seed ^ fnv1a64(label)));
  }
  static Rng stream(std::uint64_t master_seed, const std::string& label, std::uint64_t index) {
    return Rng(splitmix64(splitmix64(master_seed ^ fnv1a64(label)) + index));
  }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal pair via Box-Muller (no cached spare, so the engine state
  /// fully determines the stream).
  void normal2(double& a, double& b) {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    a = r * std::cos(t);
    b = r * std::sin(t);
  }

  double normal() {
    double a, b;
    normal2(a, b);
    return a;
  }

  std::uint64_t raw() { return engine_(); }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ckgan
