#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dplora/errors.hpp"
#include "dplora/matrix.hpp"

namespace dplora {

// Purpose tags for substream derivation. Streams for different purposes
// never collide even when their (a, b) indices do.
enum class StreamDomain : std::uint64_t {
  kDataset = 1,
  kPartition = 2,
  kModelInit = 3,
  kNodeRound = 4,  // a = node id, b = round index
  kGeneric = 5,
};

// Splittable deterministic generator built on the splitmix64 state advance.
// A substream for (seed, domain, a, b) is a pure function of its arguments,
// so node updates can run on any thread layout and still produce the exact
// sample sequence of a single-threaded run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Derives an independent stream. No draws from any other stream affect it.
  static Rng substream(std::uint64_t seed, StreamDomain domain,
                       std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = mix(seed ^ 0x6A09E667F3BCC909ULL);
    h = mix(h ^ (static_cast<std::uint64_t>(domain) * 0x9E3779B97F4A7C15ULL));
    h = mix(h ^ (a * 0xC2B2AE3D27D4EB4FULL));
    h = mix(h ^ (b * 0x165667B19E3779F9ULL));
    return Rng(h);
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe as a log() argument.
  double next_uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. The spare value is cached, so a stream
  // yields the same sequence regardless of how draws are grouped.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform_pos();
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, bound) by rejection; bound must be nonzero.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw ParamError("Rng::next_below: bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % bound;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// i.i.d. N(mean, std^2) entries in row-major draw order. std = 0 returns the
// constant-mean matrix and consumes no randomness.
template <std::floating_point T = double>
Mat<T> gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols,
                       double mean = 0.0, double std = 1.0) {
  if (std < 0.0) throw ParamError("gaussian_sample: std must be >= 0");
  Mat<T> m(rows, cols, static_cast<T>(mean));
  if (std == 0.0) return m;
  for (auto& v : m.data()) {
    v = static_cast<T>(mean + std * rng.next_gaussian());
  }
  return m;
}

// B distinct indices drawn uniformly from [0, n), in draw order
// (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(Rng& rng,
                                                           std::size_t n,
                                                           std::size_t count) {
  if (count > n) {
    throw ParamError("sample_without_replacement: count exceeds population");
  }
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

}  // namespace dplora
