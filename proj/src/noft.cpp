#include "noft/noft.hpp"

#include <chrono>
#include <cmath>
#include <utility>

#include "noft/error.hpp"

namespace noft {
namespace {

void require_shape(const Tensor64& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw Error(ErrorKind::Shape, std::string(what) + " has shape " + shape_to_string(t.shape()) +
                                      ", model expects " + shape_to_string(shape));
  }
}

Shape kernel_dims(const attention::AttentionParams& p) {
  Shape dims{p.channels, p.channels};
  for (std::size_t d = 0; d < p.spatial_rank; ++d) dims.push_back(p.kernel_size);
  return dims;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

NoftModel NoftModel::create(const Shape& shape, const ModelOptions& options, std::uint64_t seed) {
  validate_shape(shape);
  NoftModel model;
  model.shape = shape;
  Rng rng(seed);
  model.attention =
      attention::AttentionParams::random(shape[0], shape.size() - 1, options.kernel_size, rng);
  model.filter = bottleneck::FilterMap::constant(shape, options.lambda_init,
                                                 options.lambda_downsample, options.lambda_min);
  model.n_iters = options.n_iters;
  model.restandardize = options.restandardize;
  model.validate();
  return model;
}

std::size_t NoftModel::parameter_count() const {
  return attention.parameter_count() + filter.parameter_count();
}

void NoftModel::validate() const {
  validate_shape(shape);
  attention.validate();
  filter.validate();
  if (filter.shape != shape) throw Error(ErrorKind::Shape, "filter shape does not match model shape");
  if (attention.channels != shape[0] || attention.spatial_rank != shape.size() - 1) {
    throw Error(ErrorKind::Shape, "attention channels do not match model shape");
  }
  if (n_iters == 0) throw Error(ErrorKind::Parameter, "n_iters must be at least 1");
}

std::vector<ParamBlock> parameter_blocks(NoftModel& model) {
  auto& a = model.attention;
  const Shape kdims = kernel_dims(a);
  const Shape bdims{a.channels};
  return {
      {"attention.wq", kdims, a.wq},      {"attention.wk", kdims, a.wk},
      {"attention.wv", kdims, a.wv},      {"attention.bq", bdims, a.bq},
      {"attention.bk", bdims, a.bk},      {"attention.bv", bdims, a.bv},
      {"filter.logits", model.filter.grid, model.filter.logits},
  };
}

std::vector<ConstParamBlock> parameter_blocks(const NoftModel& model) {
  std::vector<ConstParamBlock> out;
  for (auto& b : parameter_blocks(const_cast<NoftModel&>(model))) {
    out.push_back({b.name, b.dims, std::span<const double>(b.values)});
  }
  return out;
}

std::vector<std::span<const double>> Gradients::blocks() const {
  return {attention.wq, attention.wk, attention.wv, attention.bq,
          attention.bk, attention.bv, filter_logits};
}

ForwardResult forward(const NoftModel& model, const Tensor64& n_orig, const Tensor64& n_div) {
  require_shape(n_orig, model.shape, "n_orig");
  require_shape(n_div, model.shape, "n_div");

  NoftTape tape;
  tape.n_orig = n_orig;
  tape.n_div = n_div;

  attention::Options opts{model.n_iters, model.precision, model.backend};
  auto att = attention::sinkhorn_attention(n_orig, model.attention, opts);
  tape.attention = std::move(att.tape);

  tape.residual = n_orig;
  for (std::size_t i = 0; i < n_orig.size(); ++i) tape.residual[i] += att.output[i];
  tape.residual_moments = moments(std::as_const(tape.residual).values());
  tape.r = standardize(tape.residual);

  tape.lambda = bottleneck::lambda_of(model.filter);
  tape.z = bottleneck::compress(tape.r, n_div, tape.lambda);
  if (model.restandardize) {
    tape.z_moments = moments(std::as_const(tape.z).values());
    tape.output = standardize(tape.z);
  } else {
    tape.output = tape.z;
  }
  Tensor64 out = tape.output;
  return ForwardResult{std::move(out), std::move(tape)};
}

LossResult total_loss(const NoftModel& model, const Tensor64& n_orig, const Tensor64& n_div,
                      double beta) {
  if (!(beta >= 0.0)) throw Error(ErrorKind::Parameter, "beta must be nonnegative");
  auto fwd = forward(model, n_orig, n_div);
  LossResult result;
  result.l_noise = mse(fwd.output, n_orig);
  result.l_info = bottleneck::info_loss(fwd.tape.lambda, fwd.tape.r);
  result.loss = beta * result.l_info + result.l_noise;
  result.tape = std::move(fwd.tape);
  return result;
}

Tensor64 standardize_backward(const Tensor64& y, double stddev, const Tensor64& dy) {
  const double n = static_cast<double>(y.size());
  double mean_dy = 0.0, mean_dyy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mean_dy += dy[i];
    mean_dyy += dy[i] * y[i];
  }
  mean_dy /= n;
  mean_dyy /= n;
  Tensor64 dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (dy[i] - mean_dy - y[i] * mean_dyy) / stddev;
  return dx;
}

Gradients backward(const NoftModel& model, const NoftTape& tape, double beta) {
  require_shape(tape.output, model.shape, "tape");
  const std::size_t n = tape.output.size();

  Tensor64 d_out(model.shape);
  for (std::size_t i = 0; i < n; ++i) {
    d_out[i] = 2.0 * (tape.output[i] - tape.n_orig[i]) / static_cast<double>(n);
  }
  const Tensor64 dz =
      model.restandardize ? standardize_backward(tape.output, tape.z_moments.stddev, d_out) : d_out;

  auto bg = bottleneck::bottleneck_backward(model.filter, tape.lambda, tape.r, tape.n_div, dz, beta);
  const Tensor64 dres = standardize_backward(tape.r, tape.residual_moments.stddev, bg.dr);
  auto ag = attention::attention_backward(tape.attention, dres);

  Gradients g;
  g.attention = std::move(ag.dparams);
  g.filter_logits = std::move(bg.dlogits);
  g.d_orig = Tensor64(model.shape);
  for (std::size_t i = 0; i < n; ++i) g.d_orig[i] = dres[i] + ag.dx[i] - d_out[i];
  return g;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, const AdamConfig& config, std::size_t step) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw Error(ErrorKind::Shape, "adam block sizes differ");
  }
  if (step == 0) throw Error(ErrorKind::Parameter, "adam step index starts at 1");
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grads[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

Adam::Adam(const NoftModel& model, AdamConfig config) : config_(config) {
  for (const auto& b : parameter_blocks(model)) {
    m_.emplace_back(b.values.size(), 0.0);
    v_.emplace_back(b.values.size(), 0.0);
  }
}

void Adam::step(NoftModel& model, const Gradients& grads) {
  auto params = parameter_blocks(model);
  auto g = grads.blocks();
  if (g.size() != params.size()) throw Error(ErrorKind::Shape, "gradient block count mismatch");
  ++step_;
  for (std::size_t b = 0; b < params.size(); ++b) {
    adam_update(params[b].values, g[b], m_[b], v_[b], config_, step_);
  }
}

std::string to_string(TrainMode mode) { return mode == TrainMode::Generic ? "generic" : "instance"; }

std::string to_string(DivPolicy policy) {
  return policy == DivPolicy::ResampleEachStep ? "resample_each_step" : "fixed";
}

DivPolicy TrainConfig::effective_div_policy() const {
  if (div_policy) return *div_policy;
  return mode == TrainMode::Generic ? DivPolicy::ResampleEachStep : DivPolicy::Fixed;
}

void TrainConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error(ErrorKind::Config, "beta must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::Config, "learning_rate must be > 0");
  if (steps == 0) throw Error(ErrorKind::Config, "steps must be >= 1");
  if (batch != 1) throw Error(ErrorKind::Config, "batch must be 1");
  if (model.n_iters == 0) throw Error(ErrorKind::Config, "n_iters must be >= 1");
  if (model.kernel_size % 2 == 0) throw Error(ErrorKind::Config, "kernel_size must be odd");
  if (model.lambda_downsample == 0) throw Error(ErrorKind::Config, "lambda_downsample must be >= 1");
}

double mean_lambda(const NoftModel& model) {
  const Tensor64 lambda = bottleneck::lambda_of(model.filter);
  return mean_of(lambda.values());
}

TrainReport train(const TrainConfig& config, const Shape& shape,
                  const std::optional<NoiseTensor>& n_orig_fixed) {
  config.validate();
  validate_shape(shape);
  if (config.mode == TrainMode::Instance && !n_orig_fixed) {
    throw Error(ErrorKind::Config, "instance mode requires a fixed n_orig (--orig)");
  }
  if (n_orig_fixed && n_orig_fixed->shape() != shape) {
    throw Error(ErrorKind::Shape, "n_orig " + shape_to_string(n_orig_fixed->shape()) +
                                      " does not match " + shape_to_string(shape));
  }

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.model = NoftModel::create(shape, config.model, derive_seed(config.seed, 0));
  report.initial_mean_lambda = mean_lambda(report.model);
  Rng noise(derive_seed(config.seed, 1));
  Adam adam(report.model, AdamConfig{config.learning_rate, config.adam_beta1, config.adam_beta2,
                                     config.adam_epsilon});

  const DivPolicy policy = config.effective_div_policy();
  Tensor64 orig, div;
  if (config.mode == TrainMode::Instance) orig = n_orig_fixed->cast<double>();
  if (policy == DivPolicy::Fixed) div = gaussian_sample(shape, noise).cast<double>();

  report.records.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (config.mode == TrainMode::Generic) orig = gaussian_sample(shape, noise).cast<double>();
    if (policy == DivPolicy::ResampleEachStep) div = gaussian_sample(shape, noise).cast<double>();

    LossResult lr = total_loss(report.model, orig, div, config.beta);
    report.records.push_back(
        StepRecord{lr.loss, lr.l_noise, lr.l_info, mean_of(lr.tape.lambda.values())});
    const Gradients g = backward(report.model, lr.tape, config.beta);
    adam.step(report.model, g);
  }
  report.final_mean_lambda = mean_lambda(report.model);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

NoiseTensor apply_with(const NoftModel& model, const NoiseTensor& n_orig, const NoiseTensor& n_div) {
  auto fwd = forward(model, n_orig.cast<double>(), n_div.cast<double>());
  return fwd.output.cast<float>();
}

NoiseTensor apply(const NoftModel& model, const NoiseTensor& n_orig, std::uint64_t div_seed) {
  if (n_orig.shape() != model.shape) {
    throw Error(ErrorKind::Shape, "noise " + shape_to_string(n_orig.shape()) +
                                      " does not match model " + shape_to_string(model.shape));
  }
  Rng rng(div_seed);
  const NoiseTensor n_div = gaussian_sample(model.shape, rng);
  return apply_with(model, n_orig, n_div);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error(ErrorKind::Shape, "pearson needs equal lengths");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorKind::DegenerateVariance, "pearson of constant input");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace noft
