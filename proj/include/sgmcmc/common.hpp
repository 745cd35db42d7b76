#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sgmcmc {

inline constexpr const char* kVersion = "sgmcmc 0.1.0";

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated an API precondition (CLI exit code 2).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file on disk (CLI exit code 4).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A chain produced a non-finite state. Carries the step at which it happened
// so partial results can be reported (CLI exit code 3).
struct ChainDivergence : std::runtime_error {
  std::int64_t step;
  ChainDivergence(std::int64_t step_idx, const std::string& what)
      : std::runtime_error(what), step(step_idx) {}
};

// SplitMix64 finalizer; good avalanche, used for seed derivation and hashing.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic substream key from a base seed and a path of indices,
// e.g. derive_seed(seed, chain_id, step).
inline std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t head, Rest... rest) {
  return derive_seed(mix64(seed ^ mix64(head)), rest...);
}

// FNV-1a over raw bytes; used for transcripts and config hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic random stream. mt19937_64 output is fully specified by the
// standard and the Gaussian transform is hand-rolled (Box-Muller), so draws
// are bit-identical across platforms. `zeroed` turns every normal() into 0,
// the zero-noise test hook used by the sampler tests.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, bool zeroed = false)
      : engine_(seed), zeroed_(zeroed) {}

  // Uniform on (0, 1]; never returns 0 so log(u) is always finite.
  double uniform01() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double normal() {
    if (zeroed_) return 0.0;
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool zeroed() const { return zeroed_; }

 private:
  std::mt19937_64 engine_;
  bool zeroed_ = false;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sgmcmc
