#include "noft/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace noft {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::DegenerateVariance: return "degenerate variance";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Instability: return "numeric instability";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::VersionMismatch: return "version mismatch";
    case ErrorKind::CrcMismatch: return "crc mismatch";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

void validate_shape(const Shape& shape) {
  if (shape.size() < kMinRank || shape.size() > kMaxRank) {
    throw Error(ErrorKind::Shape, "rank must be in [2, 4], got " + std::to_string(shape.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorKind::Shape, "zero-sized dim in " + shape_to_string(shape));
  }
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::size_t spatial_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::string token;
  auto flush = [&] {
    if (token.empty()) throw Error(ErrorKind::Shape, "malformed shape '" + text + "'");
    std::size_t pos = 0;
    unsigned long value = 0;
    try {
      value = std::stoul(token, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != token.size() || token.front() == '-') {
      throw Error(ErrorKind::Shape, "malformed shape token '" + token + "'");
    }
    shape.push_back(value);
    token.clear();
  };
  for (char c : text) {
    if (c == ',' || c == 'x' || c == '*') {
      flush();
    } else if (c != ' ') {
      token += c;
    }
  }
  flush();
  validate_shape(shape);
  return shape;
}

template <typename Real>
BasicTensor<Real>::BasicTensor(Shape shape, Real fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

template <typename Real>
BasicTensor<Real>::BasicTensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw Error(ErrorKind::Shape, "data length " + std::to_string(data_.size()) +
                                      " does not match " + shape_to_string(shape_));
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

double Rng::uniform() {
  ++draws_;
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

NoiseTensor gaussian_sample(const Shape& shape, Rng& rng) {
  validate_shape(shape);
  std::vector<float> data(element_count(shape));
  for (float& v : data) v = static_cast<float>(rng.normal());
  return NoiseTensor(shape, std::move(data));
}

template <typename Real>
Moments moments(std::span<const Real> values) {
  Moments m;
  if (values.empty()) return m;
  double sum = 0.0;
  for (Real v : values) sum += static_cast<double>(v);
  m.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (Real v : values) {
    const double d = static_cast<double>(v) - m.mean;
    sq += d * d;
  }
  m.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return m;
}

template Moments moments<float>(std::span<const float>);
template Moments moments<double>(std::span<const double>);

template <typename Real>
BasicTensor<Real> standardize(const BasicTensor<Real>& t) {
  if (t.size() < 2) throw Error(ErrorKind::DegenerateVariance, "need at least 2 elements");
  const Moments m = moments(t.values());
  if (m.stddev * m.stddev < kMinVariance) {
    throw Error(ErrorKind::DegenerateVariance, "variance below 1e-12");
  }
  BasicTensor<Real> out(t.shape());
  auto src = t.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<Real>((static_cast<double>(src[i]) - m.mean) / m.stddev);
  }
  return out;
}

template NoiseTensor standardize(const NoiseTensor&);
template Tensor64 standardize(const Tensor64&);

template <typename Real>
double mse(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::Shape,
                "mse of " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

template double mse(const NoiseTensor&, const NoiseTensor&);
template double mse(const Tensor64&, const Tensor64&);

}  // namespace noft
