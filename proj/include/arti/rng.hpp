#pragma once

#include <cstdint>
#include <random>

namespace arti {

// Every random draw in the project comes from a stream keyed by
// (seed, purpose, step). Streams are independent of call order, which keeps
// runs reproducible and lets training resume from a checkpoint bit-exactly.
enum class RngUse : std::uint64_t {
  NetInit = 1,
  ScanGen = 2,
  PoseGen = 3,
  FramePick = 4,
  Resample = 5,
  Shell = 6,
  CanonicalReg = 7,
  MeshSample = 8,
  Misc = 9,
  Pretrain = 10,
  PretrainOcc = 11,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 rng_stream(std::uint64_t seed, RngUse purpose,
                                  std::uint64_t step = 0) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ static_cast<std::uint64_t>(purpose));
  k = splitmix64(k ^ step);
  return std::mt19937_64(k);
}

// Uniform in [0,1). Explicit construction, so the mapping from engine output
// to double is pinned rather than implementation defined.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

inline std::uint64_t uniform_index(std::mt19937_64& g, std::uint64_t n) {
  // modulo bias is < 2^-40 for any n used here
  return g() % n;
}

// Standard normal via Box-Muller (pinned, unlike std::normal_distribution).
class NormalSampler {
 public:
  double operator()(std::mt19937_64& g) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(g);
    double u2 = uniform01(g);
    while (u1 <= 1e-300) u1 = uniform01(g);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace arti
