#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace ipreid {

// Deterministic RNG with fully specified output mapping. std::mt19937_64 is
// pinned by the standard, but the std distributions are not, so uniform/normal
// draws are implemented here. Every consumer seeds a fresh stream from
// mix_seed so results are independent of thread count and call interleaving.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  // splitmix64 step
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Combines seed components into one stream id (order-sensitive).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0, std::uint64_t d = 0) {
  Rng r(a);
  std::uint64_t s = r.next_u64() ^ (b * 0xd1b54a32d192ed03ULL);
  Rng r2(s);
  s = r2.next_u64() ^ (c * 0x8cb92ba72f3d8dd7ULL);
  Rng r3(s);
  return r3.next_u64() ^ (d * 0xe7037ed1a0b428dbULL);
}

}  // namespace ipreid
