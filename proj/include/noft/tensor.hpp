#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "noft/error.hpp"

namespace noft {

/// Channels first, then 1 to 3 spatial dims.
using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMinRank = 2;
inline constexpr std::size_t kMaxRank = 4;

/// Throws ErrorKind::Shape unless the shape has 2..4 nonzero dims.
void validate_shape(const Shape& shape);
std::size_t element_count(const Shape& shape);
/// Product of the spatial dims (everything after the channel dim).
std::size_t spatial_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);
/// Parses "4,16,16" or "4x16x16".
Shape parse_shape(const std::string& text);

/// Dense row-major real tensor. NoiseTensor (32-bit) is the storage and
/// exchange type; the 64-bit variant is the working precision of the model.
template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Real fill = Real(0));
  BasicTensor(Shape shape, std::vector<Real> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t channels() const noexcept { return shape_.empty() ? 0 : shape_.front(); }
  std::size_t spatial() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_.front(); }

  std::span<const Real> values() const noexcept { return data_; }
  std::span<Real> values() noexcept { return data_; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }
  Real& operator[](std::size_t i) noexcept { return data_[i]; }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

using NoiseTensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Reproducible random stream. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; normals come from Box-Muller over
/// 53-bit uniforms so the sequence does not depend on the standard
/// library's distribution implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t draws() const noexcept { return draws_; }

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Child seed for stream `index` of `seed` (SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

NoiseTensor gaussian_sample(const Shape& shape, Rng& rng);

/// Global zero-mean / unit-std rescaling (population std).
template <typename Real>
BasicTensor<Real> standardize(const BasicTensor<Real>& t);

/// Mean of squared differences.
template <typename Real>
double mse(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Population mean/std with 64-bit accumulation.
template <typename Real>
Moments moments(std::span<const Real> values);

/// Variance threshold below which standardize refuses its input.
inline constexpr double kMinVariance = 1e-12;

}  // namespace noft
