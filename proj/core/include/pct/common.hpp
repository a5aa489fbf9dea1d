#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pct {

// Error taxonomy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidArgument : Error {
  using Error::Error;
};
struct IndexError : Error {
  using Error::Error;
};
struct InvalidExtrinsics : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct LoadError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};

/// Dense row-major 2D grid. Row index i is the slow axis.
template <class T>
struct Grid2 {
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Grid2() = default;
  Grid2(int rows, int cols, T fill = T{})
      : h(rows), w(cols), data(static_cast<size_t>(rows) * cols, fill) {}

  T& at(int i, int j) { return data[static_cast<size_t>(i) * w + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * w + j]; }
  size_t size() const { return data.size(); }
  bool operator==(const Grid2&) const = default;
};

/// Dense channel-major 3D grid: (c, i, j) with j fastest.
template <class T>
struct Grid3 {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Grid3() = default;
  Grid3(int channels, int rows, int cols, T fill = T{})
      : c(channels), h(rows), w(cols),
        data(static_cast<size_t>(channels) * rows * cols, fill) {}

  T& at(int k, int i, int j) {
    return data[(static_cast<size_t>(k) * h + i) * w + j];
  }
  const T& at(int k, int i, int j) const {
    return data[(static_cast<size_t>(k) * h + i) * w + j];
  }
  size_t size() const { return data.size(); }
  bool operator==(const Grid3&) const = default;
};

using BoolGrid = Grid2<uint8_t>;

// Counter-based hashing for reproducible per-item seeds. Every random stream
// in the project is keyed by (run seed, purpose, indices) so results do not
// depend on evaluation order.
constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr uint64_t hash_seed(uint64_t seed) { return splitmix64(seed); }

template <class... Rest>
constexpr uint64_t hash_seed(uint64_t seed, uint64_t next, Rest... rest) {
  return hash_seed(splitmix64(seed) ^ (next + 0x632BE59BD9B4E019ull), rest...);
}

/// Uniform double in [0, 1) from a 64-bit value (53-bit mantissa).
constexpr double to_unit(uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

/// Small deterministic generator with platform-independent draws.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed)) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return to_unit(next_u64()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) throw InvalidArgument("Rng::below: empty range");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }
  bool bernoulli(double p) { return uniform() < p; }
  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

}  // namespace pct
