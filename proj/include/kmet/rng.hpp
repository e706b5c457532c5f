#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "kmet/error.hpp"

namespace kmet {

namespace detail {

struct U64Pair {
  std::uint64_t w0, w1;
};

// Threefry-2x64, 20 rounds (Salmon et al. 2011). Counter-based: the output
// block is a pure function of (counter, key), which is what makes parallel
// substreams reproducible.
inline U64Pair threefry2x64(std::uint64_t c0, std::uint64_t c1, std::uint64_t k0,
                            std::uint64_t k1) {
  constexpr int rot[8] = {16, 42, 12, 31, 16, 32, 24, 21};
  const std::uint64_t ks[3] = {k0, k1, 0x1BD11BDAA9FC1A22ull ^ k0 ^ k1};
  std::uint64_t x0 = c0 + ks[0];
  std::uint64_t x1 = c1 + ks[1];
  for (int r = 0; r < 20; ++r) {
    x0 += x1;
    x1 = std::rotl(x1, rot[r & 7]);
    x1 ^= x0;
    if ((r & 3) == 3) {
      const int s = r / 4 + 1;
      x0 += ks[s % 3];
      x1 += ks[(s + 1) % 3] + static_cast<std::uint64_t>(s);
    }
  }
  return {x0, x1};
}

inline std::uint64_t mix64(std::uint64_t v) {
  v ^= v >> 30;
  v *= 0xBF58476D1CE4E5B9ull;
  v ^= v >> 27;
  v *= 0x94D049BB133111EBull;
  v ^= v >> 31;
  return v;
}

}  // namespace detail

// Deterministic counter-based generator. Identical (seed, stream) produce
// identical sequences on every platform and under any thread count; distinct
// streams are statistically independent. State is a value: thread it through
// calls explicitly.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;
  double cached_normal = 0.0;
  bool has_cached_normal = false;

  static RngState seeded(std::uint64_t seed, std::uint64_t stream = 0) {
    return RngState{seed, stream, 0, 0.0, false};
  }

  // Derives an independent stream; used to give parallel repetitions their
  // own reproducible sequences.
  RngState substream(std::uint64_t index) const {
    const std::uint64_t child =
        detail::mix64(stream + 0x9E3779B97F4A7C15ull * (index + 1));
    return RngState{seed, child, 0, 0.0, false};
  }

  std::uint64_t next_u64() {
    const auto b = detail::threefry2x64(counter++, 0, seed, stream);
    return b.w0;
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer on [0, n) via multiply-shift.
  std::uint64_t uniform_below(std::uint64_t n) {
    const unsigned __int128 p = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(p >> 64);
  }

  // Standard normal via Box-Muller; one counter tick yields two draws.
  double gaussian() {
    if (has_cached_normal) {
      has_cached_normal = false;
      return cached_normal;
    }
    const auto b = detail::threefry2x64(counter++, 0, seed, stream);
    // u1 in (0, 1] keeps the log finite; u2 in [0, 1).
    const double u1 = static_cast<double>((b.w0 >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(b.w1 >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_normal = r * std::sin(a);
    has_cached_normal = true;
    return r * std::cos(a);
  }

  void fill_gaussian(std::span<double> out) {
    for (double& v : out) v = gaussian();
  }
};

// First k entries of a Fisher-Yates shuffle of [0, n): a uniform sample of k
// distinct indices, in sampled order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           RngState& rng) {
  if (k > n) fail(ErrorCode::invalid_input, "sample_without_replacement: k > n");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, RngState& rng) {
  return sample_without_replacement(n, n, rng);
}

}  // namespace kmet
