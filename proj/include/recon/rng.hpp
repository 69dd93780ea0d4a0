#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace recon {

// Deterministic random stream. std::mt19937_64 output is pinned by the
// standard; the distributions below are implemented by hand because the
// std::*_distribution adapters are implementation-defined and would break
// bitwise reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    // rejection sampling keeps the draw unbiased
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller (one value per call, cached pair)
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Derives an independent substream seed from (master, tag). FNV-1a over the
// tag mixed with the master seed, so stages can be reordered or parallelized
// without perturbing each other's streams.
inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
  uint64_t h = 1469598103934665603ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  h ^= master + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  // splitmix64 finalizer
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
  return derive_seed(master ^ (0x517cc1b727220a95ull * (index + 1)), tag);
}

}  // namespace recon
