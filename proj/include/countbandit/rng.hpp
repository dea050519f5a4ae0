#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace countbandit {

// splitmix64 finalizer; good avalanche, cheap, and stable across platforms.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ (0x517cc1b727220a95ULL + v));
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = seed;
  for (unsigned char c : tag) h = splitmix64(h ^ c);
  return h;
}

// Derive a stream seed from (base, tag, index...) without any stream having
// to know how many siblings exist. Hash-based splitting keeps replications,
// agents, and substreams (features/outcomes/policy/propensity) independent.
template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, Rest... rest) {
  std::uint64_t h = hash_combine(base, tag);
  ((h = hash_combine(h, static_cast<std::uint64_t>(rest))), ...);
  return h;
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  RngStream substream(std::string_view tag) const {
    return RngStream(hash_combine(seed_, tag));
  }
  RngStream substream(std::string_view tag, std::uint64_t index) const {
    return RngStream(hash_combine(hash_combine(seed_, tag), index));
  }

  std::mt19937_64& engine() { return gen_; }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(gen_);
  }
  // inclusive bounds
  long uniform_int(long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(gen_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  double gamma(double shape, double scale) {
    return std::gamma_distribution<double>(shape, scale)(gen_);
  }
  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<long>(mean)(gen_);
  }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace countbandit
