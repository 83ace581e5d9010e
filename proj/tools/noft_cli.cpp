#include <charconv>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "noft/error.hpp"
#include "noft/io.hpp"
#include "noft/noft.hpp"
#include "noft/sinkhorn.hpp"
#include "noft/verify.hpp"

namespace {

using namespace noft;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainMode parse_mode(const std::string& s) {
  if (s == "generic") return TrainMode::Generic;
  if (s == "instance") return TrainMode::Instance;
  throw UsageError("--mode must be 'generic' or 'instance', got '" + s + "'");
}

std::vector<double> parse_betas(const std::string& list) {
  std::vector<double> betas;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = std::min(list.find(',', start), list.size());
    const std::string token = list.substr(start, comma - start);
    double value = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), value);
    if (token.empty() || res.ec != std::errc() || res.ptr != token.data() + token.size() ||
        !std::isfinite(value) || value < 0.0) {
      throw UsageError("invalid beta value '" + token + "'");
    }
    betas.push_back(value);
    start = comma + 1;
  }
  return betas;
}

void print_stats(const NoiseTensor& t) {
  double lo = t[0], hi = t[0];
  for (float v : t.values()) {
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
  }
  const Moments m = moments(t.values());
  std::printf("mean    %.6g\nstd     %.6g\nmin     %.6g\nmax     %.6g\n", m.mean, m.stddev, lo, hi);
}

struct TrainArgs {
  std::string config, shape = "4,16,16", mode, orig, out, report;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta;
};

int run_train(const TrainArgs& a) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : io::read_config(a.config);
  if (!a.mode.empty()) config.mode = parse_mode(a.mode);
  if (a.steps) config.steps = *a.steps;
  if (a.seed) config.seed = *a.seed;
  if (a.beta) config.beta = *a.beta;
  config.validate();
  const Shape shape = parse_shape(a.shape);
  validate_shape(shape);

  std::optional<NoiseTensor> orig;
  if (config.mode == TrainMode::Instance) {
    if (a.orig.empty()) throw Error(ErrorKind::Config, "instance mode requires a fixed n_orig (--orig)");
    orig = io::read_noise(a.orig);
    if (orig->shape() != shape) {
      throw Error(ErrorKind::Shape, "--orig has shape " + shape_to_string(orig->shape()) + ", --shape is " +
                                        shape_to_string(shape));
    }
  }
  const TrainReport report = train(config, shape, orig);
  io::write_checkpoint(a.out, report.model);
  if (!a.report.empty()) io::write_train_report(a.report, report);

  const auto& r = report.records;
  std::printf("trained %zu steps on %s (%s, beta %g) in %.1f s\n", r.size(), shape_to_string(shape).c_str(),
              to_string(config.mode).c_str(), config.beta, report.seconds);
  std::printf("final loss %.6g, mean lambda %.4f -> %.4f\n", r.empty() ? 0.0 : r.back().loss,
              report.initial_mean_lambda, report.final_mean_lambda);
  return kOk;
}

int run_sample(const std::string& shape_text, std::uint64_t seed, const std::string& out) {
  const Shape shape = parse_shape(shape_text);
  validate_shape(shape);
  Rng rng(seed);
  io::write_noise(out, gaussian_sample(shape, rng));
  return kOk;
}

int run_apply(const std::string& checkpoint, const std::string& orig_path, std::uint64_t div_seed,
              const std::string& out) {
  const NoiseTensor orig = io::read_noise(orig_path);
  const NoftModel model = io::read_checkpoint(checkpoint, orig.shape());
  io::write_noise(out, apply(model, orig, div_seed));
  return kOk;
}

int run_sweep(const std::string& betas_text, std::size_t trials, const std::string& out, std::size_t steps,
              std::uint64_t seed, const std::string& shape_text, const std::string& config_path) {
  const std::vector<double> betas = parse_betas(betas_text);
  verify::SweepConfig config;
  if (!config_path.empty()) config.train = io::read_config(config_path);
  config.shape = parse_shape(shape_text);
  validate_shape(config.shape);
  config.train.steps = steps;
  config.trials = trials;
  config.seed = seed;
  const verify::TradeoffReport report = verify::tradeoff_sweep(betas, config);
  std::cout << verify::format_table(report);
  if (!out.empty()) io::write_sweep_report(out, report);
  return kOk;
}

int run_gradcheck(const std::string& shape_text, std::size_t n_iters, double tol, double beta, double h,
                  std::uint64_t seed) {
  const Shape shape = parse_shape(shape_text);
  validate_shape(shape);
  const auto f = verify::make_grad_fixture(shape, n_iters, seed);
  const auto check = verify::check_model_gradients(f.model, f.n_orig, f.n_div, beta, h, tol);
  for (const auto& b : check.blocks) {
    std::printf("%-16s %6zu coords  max rel err %.3e  %s\n", b.name.c_str(), b.report.coordinates,
                b.report.max_rel_error, b.report.passed ? "ok" : "FAIL");
  }
  std::printf("overall max rel err %.3e (tol %.1e): %s\n", check.max_rel_error, tol,
              check.passed ? "pass" : "FAIL");
  return check.passed ? kOk : kNumeric;
}

int run_ot_demo(std::size_t size, double epsilon, double tol, std::size_t max_iters) {
  if (size == 0) throw UsageError("--size must be positive");
  sinkhorn::OtProblem p;
  p.cost = Matrix<double>(size, size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) p.cost(i, j) = i == j ? 0.0 : 1.0;
  p.mu = sinkhorn::uniform_marginal(size);
  p.nu = sinkhorn::uniform_marginal(size);
  p.epsilon = epsilon;
  const auto plan = sinkhorn::solve(p, tol, max_iters);
  std::printf("swap-cost %zux%zu, epsilon %g\n", size, size, epsilon);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) std::printf("%s%.10f", j ? " " : "", plan.plan(i, j));
    std::printf("\n");
  }
  std::printf("iterations %zu\nrow residual %.3e\ncolumn residual %.3e\nentropy %.6f\ncost %.6f\n",
              plan.iterations_used, plan.residual, plan.column_residual, sinkhorn::entropy(plan),
              sinkhorn::transport_cost(plan, p.cost));
  if (!plan.converged) {
    std::fprintf(stderr, "error: did not converge within %zu iterations\n", max_iters);
    return kNumeric;
  }
  return kOk;
}

int run_inspect(const std::string& file, const std::string& shape_text) {
  if (file.empty() == shape_text.empty()) throw UsageError("inspect needs exactly one of --file or --shape");
  if (!shape_text.empty()) {
    const Shape shape = parse_shape(shape_text);
    validate_shape(shape);
    const NoftModel model = NoftModel::create(shape, ModelOptions{}, 0);
    std::printf("shape                %s\n", shape_to_string(shape).c_str());
    for (const auto& b : parameter_blocks(model)) {
      std::printf("  %-16s %s  %zu\n", b.name.c_str(), shape_to_string(b.dims).c_str(), b.values.size());
    }
    std::printf("trainable parameters %zu\n", model.parameter_count());
    return kOk;
  }
  const io::Bytes bytes = io::read_file(file);
  switch (io::sniff(bytes)) {
    case io::FileKind::Noise: {
      const NoiseTensor t = io::decode_noise(bytes);
      std::printf("noise file, version %u\nshape   %s\nelements %zu\n", unsigned{io::kNoiseVersion},
                  shape_to_string(t.shape()).c_str(), t.size());
      print_stats(t);
      std::printf("trainable parameters at this shape (1x1 projections) %zu\n",
                  NoftModel::create(t.shape(), ModelOptions{}, 0).parameter_count());
      return kOk;
    }
    case io::FileKind::Checkpoint: {
      const NoftModel m = io::decode_checkpoint(bytes);
      std::printf("checkpoint, version %u\nshape         %s\nn_iters       %zu\nkernel_size   %zu\n"
                  "restandardize %s\nlambda grid   %s (downsample %zu, lambda_min %g)\n",
                  unsigned{io::kCheckpointVersion}, shape_to_string(m.shape).c_str(), m.n_iters,
                  m.attention.kernel_size, m.restandardize ? "yes" : "no",
                  shape_to_string(m.filter.grid).c_str(), m.filter.downsample, m.filter.lambda_min);
      for (const auto& b : parameter_blocks(m)) {
        std::printf("  %-16s %s  %zu\n", b.name.c_str(), shape_to_string(b.dims).c_str(), b.values.size());
      }
      std::printf("mean lambda   %.6f\ntrainable parameters %zu\n", mean_lambda(m), m.parameter_count());
      return kOk;
    }
    case io::FileKind::Unknown:
      if (bytes.size() < 4) throw Error(ErrorKind::Truncated, "file truncated before magic");
      throw Error(ErrorKind::BadMagic, "not a NOFT noise or checkpoint file");
  }
  return kData;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Instability:
    case ErrorKind::Domain:
      return kNumeric;
    default:
      return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NOFT noise finetuning engine"};
  app.require_subcommand(1, 1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a NOFT model and write a checkpoint");
  train_cmd->add_option("--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--shape", ta.shape, "Noise shape, channels first")->capture_default_str();
  train_cmd->add_option("--mode", ta.mode, "generic or instance");
  train_cmd->add_option("--orig", ta.orig, "Fixed n_orig noise file (instance mode)");
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--report", ta.report, "Per-step loss report (TSV)");
  train_cmd->add_option("--steps", ta.steps, "Override config steps");
  train_cmd->add_option("--seed", ta.seed, "Override config seed");
  train_cmd->add_option("--beta", ta.beta, "Override config beta");

  std::string sa_shape = "4,16,16", sa_out;
  std::uint64_t sa_seed = 0;
  auto* sample_cmd = app.add_subcommand("sample", "Write a seeded standard-normal noise file");
  sample_cmd->add_option("--shape", sa_shape)->capture_default_str();
  sample_cmd->add_option("--seed", sa_seed)->capture_default_str();
  sample_cmd->add_option("--out", sa_out)->required();

  std::string ap_ckpt, ap_orig, ap_out;
  std::uint64_t ap_seed = 0;
  auto* apply_cmd = app.add_subcommand("apply", "Perturb a noise file with a trained model");
  apply_cmd->add_option("--checkpoint", ap_ckpt)->required();
  apply_cmd->add_option("--orig", ap_orig)->required();
  apply_cmd->add_option("--div-seed", ap_seed)->required();
  apply_cmd->add_option("--out", ap_out)->required();

  std::string sw_betas, sw_out, sw_shape = "4,16,16", sw_config;
  std::size_t sw_trials = 8, sw_steps = 2000;
  std::uint64_t sw_seed = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "Content/diversity tradeoff over beta values");
  sweep_cmd->add_option("--betas", sw_betas, "Comma-separated beta list")->required();
  sweep_cmd->add_option("--trials", sw_trials)->capture_default_str()->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", sw_out, "JSON report path (table goes to <out>.txt)");
  sweep_cmd->add_option("--steps", sw_steps)->capture_default_str();
  sweep_cmd->add_option("--seed", sw_seed)->capture_default_str();
  sweep_cmd->add_option("--shape", sw_shape)->capture_default_str();
  sweep_cmd->add_option("--config", sw_config)->check(CLI::ExistingFile);

  std::string gc_shape = "2,4,4";
  std::size_t gc_iters = 3;
  double gc_tol = 1e-4, gc_beta = 0.1, gc_h = 1e-3;
  std::uint64_t gc_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  grad_cmd->add_option("--shape", gc_shape)->capture_default_str();
  grad_cmd->add_option("--n-iters", gc_iters)->capture_default_str()->check(CLI::PositiveNumber);
  grad_cmd->add_option("--tol", gc_tol)->capture_default_str();
  grad_cmd->add_option("--beta", gc_beta)->capture_default_str();
  grad_cmd->add_option("--step", gc_h, "Finite-difference step")->capture_default_str();
  grad_cmd->add_option("--seed", gc_seed)->capture_default_str();

  std::size_t ot_size = 2, ot_iters = 100000;
  double ot_eps = 1.0, ot_tol = 1e-10;
  auto* ot_cmd = app.add_subcommand("ot-demo", "Solve the swap-cost entropic OT instance");
  ot_cmd->add_option("--size", ot_size)->capture_default_str();
  ot_cmd->add_option("--epsilon", ot_eps)->capture_default_str();
  ot_cmd->add_option("--tol", ot_tol)->capture_default_str();
  ot_cmd->add_option("--max-iters", ot_iters)->capture_default_str();

  std::string in_file, in_shape;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print header and stats of a NOFT file");
  inspect_cmd->add_option("--file", in_file);
  inspect_cmd->add_option("--shape", in_shape, "Report the parameter budget at a shape");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*sample_cmd) return run_sample(sa_shape, sa_seed, sa_out);
    if (*apply_cmd) return run_apply(ap_ckpt, ap_orig, ap_seed, ap_out);
    if (*sweep_cmd) return run_sweep(sw_betas, sw_trials, sw_out, sw_steps, sw_seed, sw_shape, sw_config);
    if (*grad_cmd) return run_gradcheck(gc_shape, gc_iters, gc_tol, gc_beta, gc_h, gc_seed);
    if (*ot_cmd) return run_ot_demo(ot_size, ot_eps, ot_tol, ot_iters);
    if (*inspect_cmd) return run_inspect(in_file, in_shape);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
