#include "noft/attention.hpp"

#include <cmath>
#include <string>

#include "noft/error.hpp"

namespace noft::attention {
namespace {

std::size_t int_pow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

// neighbour[l * taps + t] = flat spatial index feeding tap t at site l, or -1.
std::vector<std::ptrdiff_t> neighbour_table(const Shape& shape, std::size_t kernel_size) {
  const std::size_t rank = shape.size() - 1;
  const std::size_t sites = spatial_size(shape);
  const std::size_t taps = int_pow(kernel_size, rank);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel_size / 2);
  std::vector<std::ptrdiff_t> table(sites * taps, -1);

  std::vector<std::ptrdiff_t> pos(rank), off(rank);
  for (std::size_t l = 0; l < sites; ++l) {
    std::size_t rem = l;
    for (std::size_t d = rank; d-- > 0;) {
      pos[d] = static_cast<std::ptrdiff_t>(rem % shape[d + 1]);
      rem /= shape[d + 1];
    }
    for (std::size_t t = 0; t < taps; ++t) {
      std::size_t trem = t;
      for (std::size_t d = rank; d-- > 0;) {
        off[d] = static_cast<std::ptrdiff_t>(trem % kernel_size) - half;
        trem /= kernel_size;
      }
      std::ptrdiff_t flat = 0;
      bool inside = true;
      for (std::size_t d = 0; d < rank; ++d) {
        const std::ptrdiff_t p = pos[d] + off[d];
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(shape[d + 1])) {
          inside = false;
          break;
        }
        flat = flat * static_cast<std::ptrdiff_t>(shape[d + 1]) + p;
      }
      if (inside) table[l * taps + t] = flat;
    }
  }
  return table;
}

void check_input(const Tensor64& x, const AttentionParams& params) {
  params.validate();
  if (x.shape().size() < 2 || x.channels() != params.channels) {
    throw Error(ErrorKind::Shape, "input " + shape_to_string(x.shape()) + " does not have " +
                                      std::to_string(params.channels) + " channels");
  }
  if (x.shape().size() - 1 != params.spatial_rank) {
    throw Error(ErrorKind::Shape, "input spatial rank does not match projection kernels");
  }
}

Matrix<double> project_one(const Tensor64& x, const std::vector<double>& w,
                           const std::vector<double>& b, std::size_t taps,
                           const std::vector<std::ptrdiff_t>& nbr) {
  const std::size_t channels = x.channels();
  const std::size_t sites = x.spatial();
  Matrix<double> out(sites, channels);
  auto xs = x.values();
  for (std::size_t l = 0; l < sites; ++l) {
    for (std::size_t o = 0; o < channels; ++o) {
      double acc = b[o];
      for (std::size_t c = 0; c < channels; ++c) {
        const double* wrow = w.data() + (o * channels + c) * taps;
        for (std::size_t t = 0; t < taps; ++t) {
          const std::ptrdiff_t src = nbr[l * taps + t];
          if (src >= 0) acc += wrow[t] * xs[c * sites + static_cast<std::size_t>(src)];
        }
      }
      out(l, o) = acc;
    }
  }
  return out;
}

void project_one_backward(const Tensor64& x, const std::vector<double>& w,
                          const Matrix<double>& dproj, std::size_t taps,
                          const std::vector<std::ptrdiff_t>& nbr, std::vector<double>& dw,
                          std::vector<double>& db, Tensor64& dx) {
  const std::size_t channels = x.channels();
  const std::size_t sites = x.spatial();
  auto xs = x.values();
  auto dxs = dx.values();
  for (std::size_t l = 0; l < sites; ++l) {
    for (std::size_t o = 0; o < channels; ++o) {
      const double g = dproj(l, o);
      db[o] += g;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (o * channels + c) * taps;
        for (std::size_t t = 0; t < taps; ++t) {
          const std::ptrdiff_t src = nbr[l * taps + t];
          if (src < 0) continue;
          const std::size_t idx = c * sites + static_cast<std::size_t>(src);
          dw[base + t] += g * xs[idx];
          dxs[idx] += w[base + t] * g;
        }
      }
    }
  }
}

template <typename Real>
double max_marginal_error(const Matrix<Real>& plan, bool rows) {
  double worst = 0.0;
  const std::size_t outer = rows ? plan.rows : plan.cols;
  const std::size_t inner = rows ? plan.cols : plan.rows;
  for (std::size_t a = 0; a < outer; ++a) {
    double s = 0.0;
    for (std::size_t b = 0; b < inner; ++b) s += rows ? plan(a, b) : plan(b, a);
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

template <typename Real>
ForwardResult forward_impl(const Tensor64& x, const AttentionParams& params, const Options& options) {
  AttentionTape<Real> tape;
  tape.shape = x.shape();
  tape.params = params;
  tape.input = x;
  tape.n_iters = options.n_iters;
  tape.backend = options.backend;

  Projections<double> proj = project_qkv(x, params);
  tape.proj.q = proj.q.template cast<Real>();
  tape.proj.k = proj.k.template cast<Real>();
  tape.proj.v = proj.v.template cast<Real>();

  tape.logits = attention_logits(tape.proj.q, tape.proj.k, options.backend);
  tape.normalized = log_sinkhorn_normalize(tape.logits, options.n_iters, options.backend);

  Matrix<Real> y;
  kernels::matmul(options.backend, tape.normalized.plan, tape.proj.v, Real(1), y);
  Tensor64 out = from_sites(y, x.shape());
  return ForwardResult{std::move(out), AnyTape(std::move(tape))};
}

template <typename Real>
Gradients backward_impl(const AttentionTape<Real>& tape, const Tensor64& dy) {
  if (dy.shape() != tape.shape) {
    throw Error(ErrorKind::Shape, "dy " + shape_to_string(dy.shape()) + " does not match forward " +
                                      shape_to_string(tape.shape));
  }
  const auto backend = tape.backend;
  const std::size_t sites = tape.logits.rows;
  const std::size_t channels = tape.params.channels;
  const auto& plan = tape.normalized.plan;
  const auto& rows = tape.normalized.row_normalizers;
  const auto& cols = tape.normalized.col_normalizers;

  Matrix<Real> dys = to_sites<Real>(dy);
  Matrix<Real> dv;
  kernels::matmul_tn(backend, plan, dys, Real(1), dv);

  // d loss / d log_plan
  Matrix<Real> grad;
  kernels::plan_grad(backend, plan, dys, tape.proj.v, grad);

  const std::vector<Real> zeros(sites, Real(0));
  for (std::size_t k = tape.n_iters; k-- > 0;) {
    kernels::col_step_backward(backend, tape.logits, std::span<const Real>(rows[k]),
                               std::span<const Real>(cols[k]), grad);
    const std::vector<Real>& prev_cols = k == 0 ? zeros : cols[k - 1];
    kernels::row_step_backward(backend, tape.logits, std::span<const Real>(rows[k]),
                               std::span<const Real>(prev_cols), grad);
  }

  const Real scale = Real(1) / std::sqrt(static_cast<Real>(channels));
  Matrix<Real> dq, dk;
  kernels::matmul(backend, grad, tape.proj.k, scale, dq);
  kernels::matmul_tn(backend, grad, tape.proj.q, scale, dk);

  Gradients g{Tensor64(tape.shape), AttentionParams::zeros(channels, tape.params.spatial_rank,
                                                          tape.params.kernel_size)};
  const std::size_t taps = tape.params.taps();
  const auto nbr = neighbour_table(tape.shape, tape.params.kernel_size);
  project_one_backward(tape.input, tape.params.wq, dq.template cast<double>(), taps, nbr,
                       g.dparams.wq, g.dparams.bq, g.dx);
  project_one_backward(tape.input, tape.params.wk, dk.template cast<double>(), taps, nbr,
                       g.dparams.wk, g.dparams.bk, g.dx);
  project_one_backward(tape.input, tape.params.wv, dv.template cast<double>(), taps, nbr,
                       g.dparams.wv, g.dparams.bv, g.dx);
  return g;
}

}  // namespace

AttentionParams AttentionParams::zeros(std::size_t channels, std::size_t spatial_rank,
                                       std::size_t kernel_size) {
  AttentionParams p;
  p.channels = channels;
  p.spatial_rank = spatial_rank;
  p.kernel_size = kernel_size;
  const std::size_t n = channels * channels * p.taps();
  p.wq.assign(n, 0.0);
  p.wk.assign(n, 0.0);
  p.wv.assign(n, 0.0);
  p.bq.assign(channels, 0.0);
  p.bk.assign(channels, 0.0);
  p.bv.assign(channels, 0.0);
  return p;
}

AttentionParams AttentionParams::random(std::size_t channels, std::size_t spatial_rank,
                                        std::size_t kernel_size, Rng& rng) {
  AttentionParams p = zeros(channels, spatial_rank, kernel_size);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels * p.taps()));
  for (auto* block : {&p.wq, &p.wk, &p.wv, &p.bq, &p.bk, &p.bv}) {
    for (double& w : *block) w = rng.uniform(-bound, bound);
  }
  return p;
}

std::size_t AttentionParams::taps() const { return int_pow(kernel_size, spatial_rank); }

void AttentionParams::validate() const {
  if (channels == 0) throw Error(ErrorKind::Shape, "attention needs at least one channel");
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw Error(ErrorKind::Parameter, "projection kernel size must be odd");
  }
  const std::size_t n = channels * channels * taps();
  for (const auto* w : {&wq, &wk, &wv}) {
    if (w->size() != n) throw Error(ErrorKind::Shape, "projection kernel has wrong size");
  }
  for (const auto* b : {&bq, &bk, &bv}) {
    if (b->size() != channels) throw Error(ErrorKind::Shape, "projection bias has wrong size");
  }
}

template <typename Real>
Matrix<Real> to_sites(const Tensor64& x) {
  const std::size_t channels = x.channels();
  const std::size_t sites = x.spatial();
  Matrix<Real> m(sites, channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t l = 0; l < sites; ++l) m(l, c) = static_cast<Real>(x[c * sites + l]);
  }
  return m;
}

template <typename Real>
Tensor64 from_sites(const Matrix<Real>& m, const Shape& shape) {
  Tensor64 out(shape);
  const std::size_t channels = out.channels();
  const std::size_t sites = out.spatial();
  if (m.rows != sites || m.cols != channels) {
    throw Error(ErrorKind::Shape, "site matrix does not match " + shape_to_string(shape));
  }
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t l = 0; l < sites; ++l) out[c * sites + l] = static_cast<double>(m(l, c));
  }
  return out;
}

template Matrix<float> to_sites<float>(const Tensor64&);
template Matrix<double> to_sites<double>(const Tensor64&);
template Tensor64 from_sites(const Matrix<float>&, const Shape&);
template Tensor64 from_sites(const Matrix<double>&, const Shape&);

Projections<double> project_qkv(const Tensor64& x, const AttentionParams& params) {
  check_input(x, params);
  const std::size_t taps = params.taps();
  const auto nbr = neighbour_table(x.shape(), params.kernel_size);
  return Projections<double>{project_one(x, params.wq, params.bq, taps, nbr),
                             project_one(x, params.wk, params.bk, taps, nbr),
                             project_one(x, params.wv, params.bv, taps, nbr)};
}

template <typename Real>
Matrix<Real> attention_logits(const Matrix<Real>& q, const Matrix<Real>& k, kernels::Backend backend) {
  if (q.cols != k.cols) throw Error(ErrorKind::Shape, "query and key widths differ");
  Matrix<Real> a;
  kernels::matmul_nt(backend, q, k, Real(1) / std::sqrt(static_cast<Real>(q.cols)), a);
  return a;
}

template Matrix<float> attention_logits(const Matrix<float>&, const Matrix<float>&, kernels::Backend);
template Matrix<double> attention_logits(const Matrix<double>&, const Matrix<double>&,
                                         kernels::Backend);

template <typename Real>
Normalized<Real> log_sinkhorn_normalize(const Matrix<Real>& logits, std::size_t n_iters,
                                        kernels::Backend backend) {
  if (n_iters == 0) throw Error(ErrorKind::Parameter, "n_iters must be at least 1");
  for (Real v : logits.data) {
    if (!std::isfinite(v)) throw Error(ErrorKind::Domain, "non-finite attention logit");
  }
  Normalized<Real> out;
  std::vector<Real> a(logits.rows, Real(0));
  std::vector<Real> b(logits.cols, Real(0));
  std::vector<Real> r(logits.rows), c(logits.cols);
  out.row_normalizers.reserve(n_iters);
  out.col_normalizers.reserve(n_iters);
  for (std::size_t k = 0; k < n_iters; ++k) {
    kernels::row_logsumexp(backend, logits, std::span<const Real>(a), std::span<const Real>(b),
                           std::span<Real>(r));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += r[i];
    kernels::col_logsumexp(backend, logits, std::span<const Real>(a), std::span<const Real>(b),
                           std::span<Real>(c));
    for (std::size_t j = 0; j < b.size(); ++j) b[j] += c[j];
    out.row_normalizers.push_back(a);
    out.col_normalizers.push_back(b);
  }
  out.log_plan = Matrix<Real>(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    for (std::size_t j = 0; j < logits.cols; ++j) out.log_plan(i, j) = logits(i, j) - a[i] - b[j];
  }
  kernels::exp_shifted(backend, logits, std::span<const Real>(a), std::span<const Real>(b), out.plan);
  out.row_residual = max_marginal_error(out.plan, true);
  out.col_residual = max_marginal_error(out.plan, false);
  return out;
}

template Normalized<float> log_sinkhorn_normalize(const Matrix<float>&, std::size_t, kernels::Backend);
template Normalized<double> log_sinkhorn_normalize(const Matrix<double>&, std::size_t,
                                                   kernels::Backend);

ForwardResult sinkhorn_attention(const Tensor64& x, const AttentionParams& params,
                                 const Options& options) {
  check_input(x, params);
  if (options.n_iters == 0) throw Error(ErrorKind::Parameter, "n_iters must be at least 1");
  const bool use_double =
      options.precision == Precision::Double ||
      (options.precision == Precision::Auto && x.spatial() <= kDoublePrecisionLimit);
  return use_double ? forward_impl<double>(x, params, options) : forward_impl<float>(x, params, options);
}

Gradients attention_backward(const AnyTape& tape, const Tensor64& dy) {
  return std::visit([&](const auto& t) { return backward_impl(t, dy); }, tape);
}

}  // namespace noft::attention
