#include "noft/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>

#include "noft/error.hpp"

namespace noft::verify {
namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double finite_or_throw(double v) {
  if (!std::isfinite(v)) throw Error(ErrorKind::Domain, "probe returned a non-finite value");
  return v;
}

double tail_mean(const std::vector<StepRecord>& records, double StepRecord::*field) {
  const std::size_t n = std::min<std::size_t>(100, records.size());
  double s = 0.0;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) s += records[i].*field;
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

GradCheckReport grad_check(const Probe& probe, std::span<const double> point,
                           std::span<const double> analytic, double h, double tol) {
  if (!(h > 0.0)) throw Error(ErrorKind::Parameter, "finite-difference step must be positive");
  if (analytic.size() != point.size()) throw Error(ErrorKind::Shape, "gradient length mismatch");
  GradCheckReport report;
  report.coordinates = point.size();
  report.tol = tol;
  std::vector<double> x(point.begin(), point.end());
  finite_or_throw(probe(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = finite_or_throw(probe(x));
    x[i] = x0 - h;
    const double fm = finite_or_throw(probe(x));
    x[i] = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (i == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

ModelGradCheck check_model_gradients(const NoftModel& model, const Tensor64& n_orig,
                                     const Tensor64& n_div, double beta, double h, double tol) {
  const LossResult base = total_loss(model, n_orig, n_div, beta);
  const Gradients grads = backward(model, base.tape, beta);
  const auto analytic = grads.blocks();

  ModelGradCheck out;
  NoftModel probe_model = model;
  auto blocks = parameter_blocks(probe_model);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::span<double> target = blocks[b].values;
    const std::vector<double> original(target.begin(), target.end());
    Probe probe = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), target.begin());
      return total_loss(probe_model, n_orig, n_div, beta).loss;
    };
    auto report = grad_check(probe, original, analytic[b], h, tol);
    std::copy(original.begin(), original.end(), target.begin());
    out.blocks.push_back({blocks[b].name, report});
  }

  Probe input_probe = [&](std::span<const double> x) {
    Tensor64 orig(n_orig.shape(), std::vector<double>(x.begin(), x.end()));
    return total_loss(model, orig, n_div, beta).loss;
  };
  out.blocks.push_back({"input", grad_check(input_probe, n_orig.values(), grads.d_orig.values(), h, tol)});

  for (const auto& b : out.blocks) {
    out.max_rel_error = std::max(out.max_rel_error, b.report.max_rel_error);
    out.passed = out.passed && b.report.passed;
  }
  return out;
}

GradFixture make_grad_fixture(const Shape& shape, std::size_t n_iters, std::uint64_t seed) {
  ModelOptions options;
  options.n_iters = n_iters;
  GradFixture f{NoftModel::create(shape, options, derive_seed(seed, 0)), {}, {}};
  Rng rng(derive_seed(seed, 1));
  for (double& w : f.model.filter.logits) w = rng.uniform(-2.0, 2.0);
  f.n_orig = gaussian_sample(shape, rng).cast<double>();
  f.n_div = gaussian_sample(shape, rng).cast<double>();
  return f;
}

ToyGenerator ToyGenerator::create(std::size_t inputs, std::uint64_t seed, std::size_t outputs,
                                  bool squash) {
  if (inputs == 0 || outputs == 0) throw Error(ErrorKind::Shape, "toy generator needs nonzero sizes");
  ToyGenerator gen;
  gen.seed = seed;
  gen.squash = squash;
  gen.weight = Matrix<double>(outputs, inputs);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(inputs));
  for (double& w : gen.weight.data) w = rng.normal() * scale;
  return gen;
}

std::vector<double> toy_generate(const ToyGenerator& gen, std::span<const double> noise) {
  if (noise.size() != gen.weight.cols) {
    throw Error(ErrorKind::Shape, "noise length " + std::to_string(noise.size()) +
                                      " does not match generator input " +
                                      std::to_string(gen.weight.cols));
  }
  std::vector<double> out(gen.weight.rows);
  for (std::size_t p = 0; p < out.size(); ++p) {
    double acc = 0.0;
    auto row = gen.weight.row(p);
    for (std::size_t d = 0; d < noise.size(); ++d) acc += row[d] * noise[d];
    out[p] = gen.squash ? std::tanh(acc) : acc;
  }
  return out;
}

std::vector<double> toy_generate(const ToyGenerator& gen, const NoiseTensor& noise) {
  std::vector<double> flat(noise.values().begin(), noise.values().end());
  return toy_generate(gen, flat);
}

double content_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Shape, "content_score length mismatch");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::Domain, "content_score of a zero-norm vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double diversity_score(const std::vector<std::vector<double>>& samples) {
  if (samples.size() < 2) throw Error(ErrorKind::Config, "diversity needs at least 2 samples");
  const std::size_t len = samples.front().size();
  double norms = 0.0;
  for (const auto& s : samples) {
    if (s.size() != len) throw Error(ErrorKind::Shape, "diversity samples differ in length");
    norms += norm(s);
  }
  norms /= static_cast<double>(samples.size());
  if (norms == 0.0) return 0.0;
  double dist = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double d = samples[i][k] - samples[j][k];
        s += d * d;
      }
      dist += std::sqrt(s);
      ++pairs;
    }
  }
  return dist / static_cast<double>(pairs) / norms;
}

NoiseTensor sweep_source_noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1000));
  return gaussian_sample(shape, rng);
}

std::uint64_t trial_div_seed(std::uint64_t seed, std::size_t trial) {
  return derive_seed(seed, 2000 + trial);
}

TradeoffReport tradeoff_sweep(const std::vector<double>& betas, const SweepConfig& config) {
  if (betas.empty()) throw Error(ErrorKind::Config, "sweep needs at least one beta");
  if (config.trials == 0) throw Error(ErrorKind::Config, "sweep needs at least one trial");
  validate_shape(config.shape);

  TradeoffReport report;
  report.shape = config.shape;
  report.steps = config.train.steps;
  report.trials = config.trials;
  report.seed = config.seed;
  report.rows.resize(betas.size());

  const NoiseTensor n_orig = sweep_source_noise(config.shape, config.seed);
  const ToyGenerator gen = ToyGenerator::create(element_count(config.shape), derive_seed(config.seed, 3000),
                                                config.generator_outputs, config.squash);
  const std::vector<double> g_orig = toy_generate(gen, n_orig);

  // Independent runs; each owns its seeds, so the schedule does not matter.
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(betas.size());
  std::vector<std::exception_ptr> failures(betas.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t b = 0; b < count; ++b) {
    try {
      TrainConfig tc = config.train;
      tc.mode = TrainMode::Instance;
      tc.beta = betas[b];
      tc.seed = config.seed;
      const TrainReport trained = train(tc, config.shape, n_orig);

      TradeoffRow row;
      row.beta = betas[b];
      row.mean_lambda = trained.final_mean_lambda;
      row.l_noise = tail_mean(trained.records, &StepRecord::l_noise);
      row.l_info = tail_mean(trained.records, &StepRecord::l_info);
      std::vector<std::vector<double>> images;
      double content = 0.0;
      for (std::size_t t = 0; t < config.trials; ++t) {
        const NoiseTensor out = apply(trained.model, n_orig, trial_div_seed(config.seed, t));
        images.push_back(toy_generate(gen, out));
        content += content_score(images.back(), g_orig);
      }
      row.content = content / static_cast<double>(config.trials);
      if (images.size() >= 2) row.diversity = diversity_score(images);
      report.rows[b] = row;
    } catch (...) {
      failures[b] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return report;
}

std::string format_table(const TradeoffReport& report) {
  std::ostringstream os;
  os << "shape " << shape_to_string(report.shape) << "  steps " << report.steps << "  trials "
     << report.trials << "  seed " << report.seed << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%10s %12s %12s %12s %12s %12s\n", "beta", "mean_lambda",
                "content", "diversity", "l_noise", "l_info");
  os << line;
  for (const auto& r : report.rows) {
    char div[32];
    if (r.diversity) {
      std::snprintf(div, sizeof div, "%12.6f", *r.diversity);
    } else {
      std::snprintf(div, sizeof div, "%12s", "n/a");
    }
    std::snprintf(line, sizeof line, "%10.4g %12.6f %12.6f %s %12.6f %12.6f\n", r.beta,
                  r.mean_lambda, r.content, div, r.l_noise, r.l_info);
    os << line;
  }
  return os.str();
}

PreservationResult content_preservation(const NoftModel& model, const ToyGenerator& gen,
                                        std::size_t trials, std::uint64_t seed) {
  PreservationResult result;
  result.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, 4000 + t));
    const NoiseTensor n_orig = gaussian_sample(model.shape, rng);
    const NoiseTensor n_div = gaussian_sample(model.shape, rng);
    const NoiseTensor n_noft = apply_with(model, n_orig, n_div);
    const auto g_orig = toy_generate(gen, n_orig);
    const double s_noft = content_score(toy_generate(gen, n_noft), g_orig);
    const double s_div = content_score(toy_generate(gen, n_div), g_orig);
    result.noft_scores.push_back(s_noft);
    result.div_scores.push_back(s_div);
    if (s_noft > s_div) ++result.wins;
  }
  return result;
}

}  // namespace noft::verify
