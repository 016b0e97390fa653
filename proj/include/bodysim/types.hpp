#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace bodysim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// N x 3, one row per vertex.
using VertexArray = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Face = std::array<int, 3>;

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and two indices.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ull;
  for (std::uint64_t v : {a, b}) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 31;
  }
  return h;
}

inline constexpr std::size_t kShapeDim = 10;
inline constexpr std::size_t kNumMeasurements = 14;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when a computation produces NaN/Inf; stage() names the pipeline step.
class NumericError : public Error {
 public:
  NumericError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace bodysim
