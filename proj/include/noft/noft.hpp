#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noft/attention.hpp"
#include "noft/bottleneck.hpp"
#include "noft/tensor.hpp"

namespace noft {

struct ModelOptions {
  std::size_t n_iters = 5;
  std::size_t kernel_size = 1;
  std::size_t lambda_downsample = 1;
  double lambda_min = bottleneck::kDefaultLambdaMin;
  double lambda_init = bottleneck::kDefaultLogitInit;
  bool restandardize = true;
};

/// The trainable noise-finetune generator:
///   R = standardize(x + SA(x)),  Z = lambda R + (1 - lambda) n_div,
/// optionally restandardized on output.
struct NoftModel {
  Shape shape;
  attention::AttentionParams attention;
  bottleneck::FilterMap filter;
  std::size_t n_iters = 5;
  bool restandardize = true;
  attention::Precision precision = attention::Precision::Auto;
  kernels::Backend backend = kernels::Backend::Parallel;

  /// Random projections, constant filter logits.
  static NoftModel create(const Shape& shape, const ModelOptions& options, std::uint64_t seed);

  std::size_t parameter_count() const;
  void validate() const;
};

/// Named view of one parameter tensor, used by the optimizer, the gradient
/// checker and the checkpoint format.
struct ParamBlock {
  std::string name;
  Shape dims;
  std::span<double> values;
};

struct ConstParamBlock {
  std::string name;
  Shape dims;
  std::span<const double> values;
};

std::vector<ParamBlock> parameter_blocks(NoftModel& model);
std::vector<ConstParamBlock> parameter_blocks(const NoftModel& model);

struct NoftTape {
  Tensor64 n_orig;
  Tensor64 n_div;
  attention::AnyTape attention;
  Tensor64 residual;  // n_orig + SA(n_orig)
  Moments residual_moments;
  Tensor64 r;
  Tensor64 lambda;
  Tensor64 z;
  Moments z_moments;
  Tensor64 output;
};

struct ForwardResult {
  Tensor64 output;
  NoftTape tape;
};

ForwardResult forward(const NoftModel& model, const Tensor64& n_orig, const Tensor64& n_div);

struct LossResult {
  double loss = 0.0;
  double l_noise = 0.0;
  double l_info = 0.0;
  NoftTape tape;
};

/// loss = beta * info_loss(lambda, R) + mse(n_noft, n_orig).
LossResult total_loss(const NoftModel& model, const Tensor64& n_orig, const Tensor64& n_div,
                      double beta);

/// Gradients laid out like the model parameters, plus the input gradient.
struct Gradients {
  attention::AttentionParams attention;
  std::vector<double> filter_logits;
  Tensor64 d_orig;

  std::vector<std::span<const double>> blocks() const;
};

Gradients backward(const NoftModel& model, const NoftTape& tape, double beta);

/// Backward of y = standardize(x) given y and the std of x.
Tensor64 standardize_backward(const Tensor64& y, double stddev, const Tensor64& dy);

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// In-place bias-corrected Adam update of one parameter block; step >= 1.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, const AdamConfig& config, std::size_t step);

/// Adam moments for every block of a model.
class Adam {
 public:
  Adam(const NoftModel& model, AdamConfig config);
  void step(NoftModel& model, const Gradients& grads);
  std::size_t steps_taken() const noexcept { return step_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

enum class TrainMode { Generic, Instance };
enum class DivPolicy { ResampleEachStep, Fixed };

std::string to_string(TrainMode mode);
std::string to_string(DivPolicy policy);

struct TrainConfig {
  double beta = 0.01;
  double learning_rate = 2e-3;
  std::size_t steps = 20000;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Generic;
  /// Unset: resample in generic mode, fixed in instance mode.
  std::optional<DivPolicy> div_policy;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  ModelOptions model;

  DivPolicy effective_div_policy() const;
  void validate() const;
};

struct StepRecord {
  double loss = 0.0;
  double l_noise = 0.0;
  double l_info = 0.0;
  double mean_lambda = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> records;
  NoftModel model;
  double initial_mean_lambda = 0.0;
  double final_mean_lambda = 0.0;
  double seconds = 0.0;
};

/// Batch-size-1 training loop. Model init and noise draws are derived from
/// config.seed, so equal configs give identical reports.
TrainReport train(const TrainConfig& config, const Shape& shape,
                  const std::optional<NoiseTensor>& n_orig_fixed = std::nullopt);

double mean_lambda(const NoftModel& model);

/// One forward pass with n_div drawn from div_seed.
NoiseTensor apply(const NoftModel& model, const NoiseTensor& n_orig, std::uint64_t div_seed);
NoiseTensor apply_with(const NoftModel& model, const NoiseTensor& n_orig, const NoiseTensor& n_div);

double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace noft
