#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noft/matrix.hpp"
#include "noft/noft.hpp"

namespace noft::verify {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
  double tol = 0.0;
  bool passed = true;
};

using Probe = std::function<double(std::span<const double>)>;

/// Central differences (f(x+h) - f(x-h)) / 2h against `analytic`, with
/// relative error |a - n| / max(1, |a|). Throws ErrorKind::Domain if the
/// probe returns a non-finite value.
GradCheckReport grad_check(const Probe& probe, std::span<const double> point,
                           std::span<const double> analytic, double h, double tol);

struct BlockCheck {
  std::string name;
  GradCheckReport report;
};

struct ModelGradCheck {
  std::vector<BlockCheck> blocks;  // every parameter block, then "input"
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Checks every parameter of the total loss and its n_orig gradient.
ModelGradCheck check_model_gradients(const NoftModel& model, const Tensor64& n_orig,
                                     const Tensor64& n_div, double beta, double h, double tol);

/// Randomized model (filter logits away from their constant init) plus a
/// noise pair, the standard point for gradient checks.
struct GradFixture {
  NoftModel model;
  Tensor64 n_orig;
  Tensor64 n_div;
};

GradFixture make_grad_fixture(const Shape& shape, std::size_t n_iters, std::uint64_t seed);

/// Fixed random linear map from flattened noise to a small "image" vector,
/// standing in for a frozen diffusion generator.
struct ToyGenerator {
  std::uint64_t seed = 0;
  bool squash = false;
  Matrix<double> weight;  // outputs x inputs

  static constexpr std::size_t kDefaultOutputs = 192;  // 3 x 8 x 8
  static ToyGenerator create(std::size_t inputs, std::uint64_t seed,
                             std::size_t outputs = kDefaultOutputs, bool squash = false);
};

std::vector<double> toy_generate(const ToyGenerator& gen, std::span<const double> noise);
std::vector<double> toy_generate(const ToyGenerator& gen, const NoiseTensor& noise);

/// Cosine similarity.
double content_score(std::span<const double> a, std::span<const double> b);

/// Mean pairwise Euclidean distance over mean sample norm.
double diversity_score(const std::vector<std::vector<double>>& samples);

struct SweepConfig {
  Shape shape{4, 16, 16};
  TrainConfig train;  // mode is forced to instance
  std::size_t trials = 8;
  std::uint64_t seed = 0;
  std::size_t generator_outputs = ToyGenerator::kDefaultOutputs;
  bool squash = false;
};

struct TradeoffRow {
  double beta = 0.0;
  double mean_lambda = 0.0;
  double content = 0.0;
  std::optional<double> diversity;  // needs >= 2 trials
  double l_noise = 0.0;
  double l_info = 0.0;
};

struct TradeoffReport {
  Shape shape;
  std::size_t steps = 0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  std::vector<TradeoffRow> rows;
};

/// Fixed source noise drawn for a sweep seed.
NoiseTensor sweep_source_noise(const Shape& shape, std::uint64_t seed);
/// Diversity noise of trial t.
std::uint64_t trial_div_seed(std::uint64_t seed, std::size_t trial);

/// For each beta: finetune on one fixed n_orig, then apply with `trials`
/// different diversity seeds and score the toy-generator outputs.
TradeoffReport tradeoff_sweep(const std::vector<double>& betas, const SweepConfig& config);

std::string format_table(const TradeoffReport& report);

struct PreservationResult {
  std::size_t trials = 0;
  std::size_t wins = 0;  // content(G(n_noft), G(n_orig)) > content(G(n_div), G(n_orig))
  std::vector<double> noft_scores;
  std::vector<double> div_scores;
};

/// Each trial draws fresh (n_orig, n_div) from (seed, trial) and compares
/// how much of G(n_orig) survives in G(n_noft) versus in G(n_div).
PreservationResult content_preservation(const NoftModel& model, const ToyGenerator& gen,
                                        std::size_t trials, std::uint64_t seed);

}  // namespace noft::verify
