#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace streammem {

// Error taxonomy. The CLI maps InputError/LoadError to exit code 2 and
// BackendError/ProtocolError to exit code 3.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LoadError : public InputError {
 public:
  LoadError(const std::string& what, std::size_t line)
      : InputError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

class EngineStopped : public std::runtime_error {
 public:
  EngineStopped() : std::runtime_error("engine is not running") {}
};

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool empty() const noexcept { return rows == 0; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Closed time interval in stream seconds.
struct TimeSpan {
  double first = 0.0;
  double last = 0.0;

  TimeSpan merged(const TimeSpan& o) const {
    return {first < o.first ? first : o.first, last > o.last ? last : o.last};
  }
  bool contains(double t) const noexcept { return t >= first && t <= last; }
  friend bool operator==(const TimeSpan&, const TimeSpan&) = default;
};

// FNV-1a, used for seeds, feature hashing and digests. Stable across
// platforms so golden files and seeds stay reproducible.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_bytes(const void* p, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= kFnvPrime;
  }
  return h;
}

/// splitmix64 finalizer; mixes a seed with a salt into a well-spread seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform double in [0,1) from the raw engine output; independent of the
/// standard library's distribution implementations.
inline double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string hex_digest(std::uint64_t h);
std::uint64_t matrix_digest(const Matrix& m);

}  // namespace streammem
