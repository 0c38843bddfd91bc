#pragma once

#include <cstdint>
#include <random>

namespace areal {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent per-chain seeds from one
// root seed: stream_seed(root, k) = splitmix64(root + (k + 1) * golden gamma).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t root, std::uint64_t stream) noexcept {
  return splitmix64(root + (stream + 1) * 0x9E3779B97F4A7C15ULL);
}

inline Rng make_stream(std::uint64_t root, std::uint64_t stream) {
  return Rng(stream_seed(root, stream));
}

inline double draw_normal(Rng& rng, double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return mean + sd * dist(rng);
}

inline double draw_uniform(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

// Gamma with shape/rate parameterization.
inline double draw_gamma(Rng& rng, double shape, double rate) {
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(rng);
}

// Inverse gamma with shape/rate: X = 1 / Gamma(shape, rate).
inline double draw_inverse_gamma(Rng& rng, double shape, double rate) {
  return 1.0 / draw_gamma(rng, shape, rate);
}

}  // namespace areal
