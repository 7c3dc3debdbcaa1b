#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mshot {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using VecF = Vec<float>;

/// Bad caller input: shapes, ranges, empty collections.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or incompatible on-disk data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Container written by an incompatible format version.
class UnsupportedVersion : public FormatError {
 public:
  using FormatError::FormatError;
};

/// NaN/Inf encountered during training or evaluation.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) {
  return mix64(seed ^ mix64(a));
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

/// Box-Muller normal sampler; independent of the standard library's
/// distribution implementation so streams are stable across toolchains.
class NormalSampler {
 public:
  explicit NormalSampler(Rng& rng) : rng_(rng) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }
  double uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

 private:
  Rng& rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) without modulo bias.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

/// Fisher-Yates with uniform_index so permutations are toolchain-stable.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace mshot
