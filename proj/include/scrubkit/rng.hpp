#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace scrub {

// splitmix64 finalizer, used to derive independent stream seeds from a run seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(seed) ^ mix64(a * 0x2545f4914f6cdd1dULL + 0x632be59bd9b4e019ULL) ^
               mix64(b * 0xff51afd7ed558ccdULL + 0xc4ceb9fe1a85ec53ULL));
}

// Deterministic RNG with explicitly-specified sampling algorithms so that
// results are reproducible bit-for-bit across standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // unbiased uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(i)]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  // k distinct values from [0, n), returned in ascending order
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> p = permutation(n);
    p.resize(k);
    std::sort(p.begin(), p.end());
    return p;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace scrub
