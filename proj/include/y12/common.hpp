#pragma once

// Shared plumbing: error types, shapes, the seeded PRNG, and the two
// instrumentation counters (multiply-accumulates, auxiliary allocations).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace y12 {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension violations (mismatched axes, bad extents).
struct ShapeError : Error {
  using Error::Error;
};
// Invalid layer/op configuration (bad stride, groups, segment count).
struct ConfigError : Error {
  using Error::Error;
};
// Invalid data fed to an op (negative variance, corrupt file payload).
struct DataError : Error {
  using Error::Error;
};
// API misuse (backward without a tape, double backward).
struct UsageError : Error {
  using Error::Error;
};
// Non-finite value produced or encountered.
struct NumericError : Error {
  using Error::Error;
};
// Filesystem / stream failures.
struct IoError : Error {
  using Error::Error;
};
// Malformed input file (PPM, CSV, JSON, weight file).
struct ParseError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// splitmix64: 64-bit-state generator, identical sequences on every platform.
// Normal deviates come from Box-Muller on top of it so no distribution is
// left to the standard library's discretion.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Normal clipped by rejection to |z| <= 2 before scaling by sigma.
  double trunc_normal(double sigma) {
    double z = normal();
    while (std::abs(z) > 2.0) z = normal();
    return z * sigma;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Multiply-accumulate instrumentation. Kernels report the inner-loop trip
// counts they actually execute; counting is off unless a scope enables it so
// benchmarks stay unperturbed.
namespace macs {

inline bool& counting() {
  thread_local bool flag = false;
  return flag;
}

inline std::uint64_t& counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

inline void add(std::uint64_t n) {
  if (counting()) counter() += n;
}

inline void reset() { counter() = 0; }

inline std::uint64_t total() { return counter(); }

struct Scope {
  Scope() : prev_(counting()) { counting() = true; }
  ~Scope() { counting() = prev_; }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  bool prev_;
};

}  // namespace macs

// Auxiliary-allocation instrumentation for kernels whose working-set size is
// part of their contract (tiled attention vs. the naive score matrix).
namespace auxmem {

struct Stats {
  std::size_t current_bytes = 0;
  std::size_t peak_bytes = 0;
};

inline Stats& stats() {
  thread_local Stats s;
  return s;
}

inline void reset() { stats() = Stats{}; }

inline std::size_t peak_bytes() { return stats().peak_bytes; }

inline void on_alloc(std::size_t bytes) {
  auto& s = stats();
  s.current_bytes += bytes;
  if (s.current_bytes > s.peak_bytes) s.peak_bytes = s.current_bytes;
}

inline void on_free(std::size_t bytes) { stats().current_bytes -= bytes; }

// Scratch buffer that reports its footprint to the thread-local counter.
template <typename T>
class TrackedBuffer {
 public:
  explicit TrackedBuffer(std::size_t n) : data_(n) { on_alloc(n * sizeof(T)); }
  ~TrackedBuffer() { on_free(data_.size() * sizeof(T)); }
  TrackedBuffer(const TrackedBuffer&) = delete;
  TrackedBuffer& operator=(const TrackedBuffer&) = delete;

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  std::size_t size() const { return data_.size(); }

 private:
  std::vector<T> data_;
};

}  // namespace auxmem

}  // namespace y12
