#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbamnet {

// Error taxonomy. The CLI maps ConfigError to exit code 2 (validation) and
// everything else to exit code 1 (runtime).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TensorError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t state = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    state ^= p[i];
    state *= kFnvPrime;
  }
  return state;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t state = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), state);
}

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (base, salt). Used so every
// consumer (init, shuffle per stage/epoch, augmentation) gets its own
// deterministic stream regardless of call order elsewhere.
inline uint64_t mix_seed(uint64_t base, uint64_t salt) {
  uint64_t s = base ^ (0x9e3779b97f4a7c15ULL + (salt << 6) + (salt >> 2));
  return splitmix64(s);
}

std::string to_hex(uint64_t v);

// Deterministic RNG with a fixed algorithm so identical seeds reproduce
// bitwise-identical streams on any platform (std:: distributions are
// implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n)
  uint64_t uniform_int(uint64_t n);

  // Box-Muller; second variate discarded to keep the state stream simple.
  double normal();

  template <typename RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    const auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      const uint64_t j = uniform_int(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace cbamnet
