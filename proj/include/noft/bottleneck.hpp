#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "noft/tensor.hpp"

namespace noft::bottleneck {

inline constexpr double kDefaultLambdaMin = 1e-4;
/// Initial filter logit; logistic(2.2) is about 0.9, close to the identity.
inline constexpr double kDefaultLogitInit = 2.2;

/// Learnable information filter. Logits live on a grid that is the noise
/// shape with every spatial dim divided by `downsample` (rounded up); the
/// grid is linearly upsampled to full resolution before the logistic
/// squash. With downsample = 1 there is one logit per noise element.
struct FilterMap {
  Shape shape;
  Shape grid;
  std::size_t downsample = 1;
  /// Clamp margin; 0 disables clamping.
  double lambda_min = kDefaultLambdaMin;
  std::vector<double> logits;

  static FilterMap constant(const Shape& shape, double logit, std::size_t downsample = 1,
                            double lambda_min = kDefaultLambdaMin);

  std::size_t parameter_count() const { return logits.size(); }
  void validate() const;
  /// Logits at full resolution.
  Tensor64 upsampled_logits() const;
};

Shape filter_grid(const Shape& shape, std::size_t downsample);

double logistic(double w);

/// lambda = clamp(logistic(upsampled logits), lambda_min, 1 - lambda_min).
Tensor64 lambda_of(const FilterMap& filter);

/// Z = lambda R + (1 - lambda) eps, elementwise.
Tensor64 compress(const Tensor64& r, const Tensor64& eps, const Tensor64& lambda);

/// Per-element KL[N(lambda R, (1-lambda)^2) || N(0, 1)].
std::vector<double> info_loss_terms(const Tensor64& lambda, const Tensor64& r);
/// Mean of info_loss_terms. Throws ErrorKind::Domain for lambda >= 1.
double info_loss(const Tensor64& lambda, const Tensor64& r);

struct Gradients {
  Tensor64 dr;
  std::vector<double> dlogits;  // grid-shaped, like FilterMap::logits
};

/// Gradients of <dz, Z> + info_weight * info_loss with respect to R and the
/// filter logits. Clamped coordinates get zero logit gradient.
Gradients bottleneck_backward(const FilterMap& filter, const Tensor64& lambda, const Tensor64& r,
                              const Tensor64& eps, const Tensor64& dz, double info_weight);

}  // namespace noft::bottleneck
