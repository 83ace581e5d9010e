#include "noft/bottleneck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "noft/error.hpp"

namespace noft::bottleneck {
namespace {

struct Tap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double w_hi = 0.0;  // weight of hi; lo gets 1 - w_hi
};

// Corner-aligned linear interpolation from `from` samples to `to` samples.
std::vector<Tap> interpolation_table(std::size_t from, std::size_t to) {
  std::vector<Tap> table(to);
  for (std::size_t i = 0; i < to; ++i) {
    if (from == 1 || to == 1) {
      table[i] = Tap{0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(from - 1) /
                       static_cast<double>(to - 1);
    const auto lo = std::min(static_cast<std::size_t>(pos), from - 1);
    const std::size_t hi = std::min(lo + 1, from - 1);
    table[i] = Tap{lo, hi, pos - static_cast<double>(lo)};
  }
  return table;
}

// Resample `axis` of a row-major array with dims `dims` to `to` samples.
std::vector<double> resample_axis(const std::vector<double>& in, Shape& dims, std::size_t axis,
                                  std::size_t to) {
  const std::size_t from = dims[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= dims[d];
  for (std::size_t d = axis + 1; d < dims.size(); ++d) inner *= dims[d];
  const auto table = interpolation_table(from, to);
  std::vector<double> out(outer * to * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < to; ++i) {
      const Tap& t = table[i];
      const double* lo = in.data() + (o * from + t.lo) * inner;
      const double* hi = in.data() + (o * from + t.hi) * inner;
      double* dst = out.data() + (o * to + i) * inner;
      for (std::size_t k = 0; k < inner; ++k) dst[k] = (1.0 - t.w_hi) * lo[k] + t.w_hi * hi[k];
    }
  }
  dims[axis] = to;
  return out;
}

// Adjoint of resample_axis: maps a gradient on `to` samples back to `from`.
std::vector<double> resample_axis_adjoint(const std::vector<double>& grad, Shape& dims,
                                          std::size_t axis, std::size_t from) {
  const std::size_t to = dims[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= dims[d];
  for (std::size_t d = axis + 1; d < dims.size(); ++d) inner *= dims[d];
  const auto table = interpolation_table(from, to);
  std::vector<double> out(outer * from * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < to; ++i) {
      const Tap& t = table[i];
      const double* src = grad.data() + (o * to + i) * inner;
      double* lo = out.data() + (o * from + t.lo) * inner;
      double* hi = out.data() + (o * from + t.hi) * inner;
      for (std::size_t k = 0; k < inner; ++k) {
        lo[k] += (1.0 - t.w_hi) * src[k];
        hi[k] += t.w_hi * src[k];
      }
    }
  }
  dims[axis] = from;
  return out;
}

void require_same(const Tensor64& a, const Tensor64& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::Shape, std::string(what) + ": " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
  }
}

bool is_clamped(double raw, double lambda_min) {
  return lambda_min > 0.0 && (raw < lambda_min || raw > 1.0 - lambda_min);
}

}  // namespace

Shape filter_grid(const Shape& shape, std::size_t downsample) {
  validate_shape(shape);
  if (downsample == 0) throw Error(ErrorKind::Parameter, "downsample factor must be >= 1");
  Shape grid = shape;
  for (std::size_t d = 1; d < grid.size(); ++d) grid[d] = (shape[d] + downsample - 1) / downsample;
  return grid;
}

FilterMap FilterMap::constant(const Shape& shape, double logit, std::size_t downsample,
                              double lambda_min) {
  FilterMap f;
  f.shape = shape;
  f.grid = filter_grid(shape, downsample);
  f.downsample = downsample;
  f.lambda_min = lambda_min;
  f.logits.assign(element_count(f.grid), logit);
  return f;
}

void FilterMap::validate() const {
  if (grid != filter_grid(shape, downsample)) throw Error(ErrorKind::Shape, "filter grid mismatch");
  if (logits.size() != element_count(grid)) throw Error(ErrorKind::Shape, "filter logit count mismatch");
  if (!(lambda_min >= 0.0 && lambda_min < 0.5)) {
    throw Error(ErrorKind::Parameter, "lambda_min must be in [0, 0.5)");
  }
  for (double w : logits) {
    if (!std::isfinite(w)) throw Error(ErrorKind::Domain, "non-finite filter logit");
  }
}

Tensor64 FilterMap::upsampled_logits() const {
  if (grid == shape) return Tensor64(shape, logits);
  std::vector<double> values = logits;
  Shape dims = grid;
  for (std::size_t axis = 1; axis < shape.size(); ++axis) {
    values = resample_axis(values, dims, axis, shape[axis]);
  }
  return Tensor64(shape, std::move(values));
}

double logistic(double w) {
  if (w >= 0.0) return 1.0 / (1.0 + std::exp(-w));
  const double e = std::exp(w);
  return e / (1.0 + e);
}

Tensor64 lambda_of(const FilterMap& filter) {
  filter.validate();
  Tensor64 lambda = filter.upsampled_logits();
  const double lo = filter.lambda_min;
  for (double& v : lambda.values()) {
    v = logistic(v);
    if (lo > 0.0) v = std::clamp(v, lo, 1.0 - lo);
  }
  return lambda;
}

Tensor64 compress(const Tensor64& r, const Tensor64& eps, const Tensor64& lambda) {
  require_same(r, eps, "compress");
  require_same(r, lambda, "compress");
  Tensor64 z(r.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = lambda[i] * r[i] + (1.0 - lambda[i]) * eps[i];
  return z;
}

std::vector<double> info_loss_terms(const Tensor64& lambda, const Tensor64& r) {
  require_same(lambda, r, "info_loss");
  std::vector<double> terms(lambda.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double l = lambda[i];
    if (!(l >= 0.0 && l < 1.0)) {
      throw Error(ErrorKind::Domain, "lambda must lie in [0, 1), got " + std::to_string(l));
    }
    // -1/2 [log (1-l)^2 - (1-l)^2 - (l r)^2 + 1], rearranged so small l keeps precision.
    const double lr = l * r[i];
    terms[i] = -std::log1p(-l) - l + 0.5 * l * l + 0.5 * lr * lr;
  }
  return terms;
}

double info_loss(const Tensor64& lambda, const Tensor64& r) {
  const auto terms = info_loss_terms(lambda, r);
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum / static_cast<double>(terms.size());
}

Gradients bottleneck_backward(const FilterMap& filter, const Tensor64& lambda, const Tensor64& r,
                              const Tensor64& eps, const Tensor64& dz, double info_weight) {
  require_same(r, eps, "bottleneck_backward");
  require_same(r, lambda, "bottleneck_backward");
  require_same(r, dz, "bottleneck_backward");
  if (r.shape() != filter.shape) throw Error(ErrorKind::Shape, "filter shape mismatch");

  const Tensor64 pre = filter.upsampled_logits();
  const double scale = info_weight / static_cast<double>(r.size());
  Gradients g{Tensor64(r.shape()), {}};
  std::vector<double> dpre(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double l = lambda[i];
    const double ri = r[i];
    double dl = (ri - eps[i]) * dz[i];
    double dri = l * dz[i];
    if (scale != 0.0) {
      dl += scale * (1.0 / (1.0 - l) - (1.0 - l) + l * ri * ri);
      dri += scale * l * l * ri;
    }
    g.dr[i] = dri;
    const double raw = logistic(pre[i]);
    dpre[i] = is_clamped(raw, filter.lambda_min) ? 0.0 : dl * raw * (1.0 - raw);
  }

  if (filter.grid == filter.shape) {
    g.dlogits = std::move(dpre);
    return g;
  }
  Shape dims = filter.shape;
  for (std::size_t axis = filter.shape.size(); axis-- > 1;) {
    dpre = resample_axis_adjoint(dpre, dims, axis, filter.grid[axis]);
  }
  g.dlogits = std::move(dpre);
  return g;
}

}  // namespace noft::bottleneck
