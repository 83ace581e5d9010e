#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "noft/kernels.hpp"
#include "noft/matrix.hpp"
#include "noft/tensor.hpp"

namespace noft {
class Rng;
}

namespace noft::attention {

/// Query/key/value projections. Each kernel maps C input channels to C
/// output channels over a k^d neighbourhood of every spatial site (zero
/// padding, k odd); k = 1 is the pointwise case. Kernel layout is
/// [out][in][tap], taps in row-major order over the neighbourhood.
struct AttentionParams {
  std::size_t channels = 0;
  std::size_t spatial_rank = 0;
  std::size_t kernel_size = 1;
  std::vector<double> wq, wk, wv;
  std::vector<double> bq, bk, bv;

  static AttentionParams zeros(std::size_t channels, std::size_t spatial_rank,
                               std::size_t kernel_size = 1);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for kernels and biases.
  static AttentionParams random(std::size_t channels, std::size_t spatial_rank,
                                std::size_t kernel_size, Rng& rng);

  std::size_t taps() const;
  std::size_t parameter_count() const { return 3 * (wq.size() + bq.size()); }
  void validate() const;
};

/// Compute precision of the L x L matrices. Auto uses 64-bit up to
/// L = kDoublePrecisionLimit and 32-bit beyond.
enum class Precision { Auto, Double, Single };
inline constexpr std::size_t kDoublePrecisionLimit = 4096;

struct Options {
  std::size_t n_iters = 5;
  Precision precision = Precision::Auto;
  kernels::Backend backend = kernels::Backend::Parallel;
};

template <typename Real>
struct Projections {
  Matrix<Real> q, k, v;  // each L x C
};

/// Per-site projections of a channels-first tensor, flattened to L x C.
Projections<double> project_qkv(const Tensor64& x, const AttentionParams& params);

/// A_ij = <q_i, k_j> / sqrt(C).
template <typename Real>
Matrix<Real> attention_logits(const Matrix<Real>& q, const Matrix<Real>& k,
                              kernels::Backend backend = kernels::Backend::Parallel);

/// Result of alternating log-domain row/column normalization.
template <typename Real>
struct Normalized {
  Matrix<Real> log_plan;  // A after the last column normalization
  Matrix<Real> plan;      // exp(log_plan)
  // Cumulative row and column log-normalizers after each iteration k
  // (the Sinkhorn scalars): state after iteration k is A0 - rows[k] - cols[k].
  std::vector<std::vector<Real>> row_normalizers;
  std::vector<std::vector<Real>> col_normalizers;
  double row_residual = 0.0;  // max |row sum - 1|
  double col_residual = 0.0;  // max |col sum - 1|
};

/// Alternately subtracts the row LogSumExp and the column LogSumExp for
/// n_iters rounds; the plan rows and columns approach sum 1.
template <typename Real>
Normalized<Real> log_sinkhorn_normalize(const Matrix<Real>& logits, std::size_t n_iters,
                                        kernels::Backend backend = kernels::Backend::Parallel);

template <typename Real>
struct AttentionTape {
  Shape shape;
  AttentionParams params;
  Tensor64 input;
  std::size_t n_iters = 0;
  kernels::Backend backend = kernels::Backend::Parallel;
  Projections<Real> proj;
  Matrix<Real> logits;
  Normalized<Real> normalized;
};

using AnyTape = std::variant<AttentionTape<double>, AttentionTape<float>>;

struct ForwardResult {
  Tensor64 output;
  AnyTape tape;
};

/// y = reshape(T V) with T the normalized attention plan.
ForwardResult sinkhorn_attention(const Tensor64& x, const AttentionParams& params,
                                 const Options& options = {});

struct Gradients {
  Tensor64 dx;
  AttentionParams dparams;
};

/// Reverse pass through the unrolled forward computation.
Gradients attention_backward(const AnyTape& tape, const Tensor64& dy);

/// Row-major L x C view of a channels-first tensor and back.
template <typename Real>
Matrix<Real> to_sites(const Tensor64& x);
template <typename Real>
Tensor64 from_sites(const Matrix<Real>& m, const Shape& shape);

}  // namespace noft::attention
