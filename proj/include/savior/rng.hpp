// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace savior {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Self-contained xoshiro256** generator. The library never uses <random>
// distributions, so identical seeds reproduce identical streams on every
// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = detail::splitmix64(sm);
  }

  // Independent substream keyed by name; insensitive to draw order on the
  // parent stream, so adding parameters to one module cannot shift the
  // initialization of another.
  Rng fork(std::string_view name) const {
    std::uint64_t mix = seed_ ^ detail::fnv1a64(name);
    std::uint64_t sm = mix;
    return Rng(detail::splitmix64(sm));
  }

  Rng fork(std::uint64_t index) const {
    std::uint64_t mix = seed_ ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    std::uint64_t sm = mix;
    return Rng(detail::splitmix64(sm));
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n). n must be positive.
  std::int64_t uniform_int(std::int64_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % un) - 1;
    std::uint64_t x = next_u64();
    while (x > limit) x = next_u64();
    return static_cast<std::int64_t>(x % un);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Pareto(alpha) with scale x_min: heavy-tailed draws for item popularity.
  double pareto(double x_min, double alpha) {
    double u = uniform01();
    while (u <= 0.0) u = uniform01();
    return x_min * std::pow(u, -1.0 / alpha);
  }

  // Unit vector uniform on the sphere.
  std::vector<double> unit_vector(int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    double nrm2 = 0.0;
    do {
      nrm2 = 0.0;
      for (auto& x : v) {
        x = normal();
        nrm2 += x * x;
      }
    } while (nrm2 < 1e-24);
    const double inv = 1.0 / std::sqrt(nrm2);
    for (auto& x : v) x *= inv;
    return v;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4]{};
  bool has_spare_{false};
  double spare_{0.0};
};

}  // namespace savior
