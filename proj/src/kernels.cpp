#include "noft/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace noft::kernels {
namespace {

// Column-block width for kernels that reduce down columns. Each block is
// owned by one thread, so a column is always summed in row order.
constexpr std::size_t kColumnBlock = 64;

std::size_t block_count(std::size_t cols) { return (cols + kColumnBlock - 1) / kColumnBlock; }

// Shared per-row / per-block bodies: serial and parallel run exactly these.

template <typename Real>
void matmul_nt_row(const Matrix<Real>& lhs, const Matrix<Real>& rhs, Real scale, Matrix<Real>& out,
                   std::size_t i) {
  const std::size_t inner = lhs.cols;
  const Real* l = lhs.data.data() + i * inner;
  for (std::size_t j = 0; j < rhs.rows; ++j) {
    const Real* r = rhs.data.data() + j * inner;
    Real acc = 0;
    for (std::size_t k = 0; k < inner; ++k) acc += l[k] * r[k];
    out(i, j) = scale * acc;
  }
}

template <typename Real>
void matmul_row(const Matrix<Real>& m, const Matrix<Real>& x, Real scale, Matrix<Real>& out,
                std::size_t i) {
  Real* o = out.data.data() + i * x.cols;
  std::fill(o, o + x.cols, Real(0));
  const Real* mrow = m.data.data() + i * m.cols;
  for (std::size_t j = 0; j < m.cols; ++j) {
    const Real w = mrow[j];
    const Real* xrow = x.data.data() + j * x.cols;
    for (std::size_t c = 0; c < x.cols; ++c) o[c] += w * xrow[c];
  }
  for (std::size_t c = 0; c < x.cols; ++c) o[c] *= scale;
}

template <typename Real>
void matmul_tn_block(const Matrix<Real>& m, const Matrix<Real>& x, Real scale, Matrix<Real>& out,
                     std::size_t block) {
  const std::size_t j0 = block * kColumnBlock;
  const std::size_t j1 = std::min(m.cols, j0 + kColumnBlock);
  const std::size_t width = x.cols;
  std::fill(out.data.begin() + j0 * width, out.data.begin() + j1 * width, Real(0));
  for (std::size_t i = 0; i < m.rows; ++i) {
    const Real* xrow = x.data.data() + i * width;
    for (std::size_t j = j0; j < j1; ++j) {
      const Real w = m(i, j);
      Real* o = out.data.data() + j * width;
      for (std::size_t c = 0; c < width; ++c) o[c] += w * xrow[c];
    }
  }
  for (std::size_t idx = j0 * width; idx < j1 * width; ++idx) out.data[idx] *= scale;
}

template <typename Real>
void row_logsumexp_row(const Matrix<Real>& logits, std::span<const Real> a, std::span<const Real> b,
                       std::span<Real> r, std::size_t i) {
  const Real* row = logits.data.data() + i * logits.cols;
  Real peak = -std::numeric_limits<Real>::infinity();
  for (std::size_t j = 0; j < logits.cols; ++j) peak = std::max(peak, row[j] - a[i] - b[j]);
  Real sum = 0;
  for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(row[j] - a[i] - b[j] - peak);
  r[i] = peak + std::log(sum);
}

template <typename Real>
void col_logsumexp_block(const Matrix<Real>& logits, std::span<const Real> a,
                         std::span<const Real> b, std::span<Real> c, std::size_t block) {
  const std::size_t j0 = block * kColumnBlock;
  const std::size_t j1 = std::min(logits.cols, j0 + kColumnBlock);
  Real peak[kColumnBlock];
  Real sum[kColumnBlock];
  for (std::size_t j = j0; j < j1; ++j) {
    peak[j - j0] = -std::numeric_limits<Real>::infinity();
    sum[j - j0] = 0;
  }
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const Real* row = logits.data.data() + i * logits.cols;
    for (std::size_t j = j0; j < j1; ++j) peak[j - j0] = std::max(peak[j - j0], row[j] - a[i] - b[j]);
  }
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const Real* row = logits.data.data() + i * logits.cols;
    for (std::size_t j = j0; j < j1; ++j) sum[j - j0] += std::exp(row[j] - a[i] - b[j] - peak[j - j0]);
  }
  for (std::size_t j = j0; j < j1; ++j) c[j] = peak[j - j0] + std::log(sum[j - j0]);
}

template <typename Real>
void exp_shifted_row(const Matrix<Real>& logits, std::span<const Real> a, std::span<const Real> b,
                     Matrix<Real>& out, std::size_t i) {
  const Real* row = logits.data.data() + i * logits.cols;
  Real* o = out.data.data() + i * logits.cols;
  for (std::size_t j = 0; j < logits.cols; ++j) o[j] = std::exp(row[j] - a[i] - b[j]);
}

template <typename Real>
void plan_grad_row(const Matrix<Real>& plan, const Matrix<Real>& dy, const Matrix<Real>& v,
                   Matrix<Real>& grad, std::size_t i) {
  const std::size_t width = dy.cols;
  const Real* d = dy.data.data() + i * width;
  for (std::size_t j = 0; j < plan.cols; ++j) {
    const Real* vrow = v.data.data() + j * width;
    Real acc = 0;
    for (std::size_t c = 0; c < width; ++c) acc += d[c] * vrow[c];
    grad(i, j) = plan(i, j) * acc;
  }
}

template <typename Real>
void row_step_backward_row(const Matrix<Real>& logits, std::span<const Real> a,
                           std::span<const Real> b, Matrix<Real>& grad, std::size_t i) {
  const Real* row = logits.data.data() + i * logits.cols;
  Real* g = grad.data.data() + i * logits.cols;
  Real total = 0;
  for (std::size_t j = 0; j < logits.cols; ++j) total += g[j];
  for (std::size_t j = 0; j < logits.cols; ++j) g[j] -= std::exp(row[j] - a[i] - b[j]) * total;
}

template <typename Real>
void col_sums_block(const Matrix<Real>& grad, std::vector<Real>& sums, std::size_t block) {
  const std::size_t j0 = block * kColumnBlock;
  const std::size_t j1 = std::min(grad.cols, j0 + kColumnBlock);
  for (std::size_t j = j0; j < j1; ++j) sums[j] = 0;
  for (std::size_t i = 0; i < grad.rows; ++i) {
    const Real* g = grad.data.data() + i * grad.cols;
    for (std::size_t j = j0; j < j1; ++j) sums[j] += g[j];
  }
}

template <typename Real>
void col_step_update_row(const Matrix<Real>& logits, std::span<const Real> a,
                         std::span<const Real> b, const std::vector<Real>& sums,
                         Matrix<Real>& grad, std::size_t i) {
  const Real* row = logits.data.data() + i * logits.cols;
  Real* g = grad.data.data() + i * logits.cols;
  for (std::size_t j = 0; j < logits.cols; ++j) g[j] -= std::exp(row[j] - a[i] - b[j]) * sums[j];
}

template <typename Real>
void ensure(Matrix<Real>& out, std::size_t rows, std::size_t cols) {
  if (out.rows != rows || out.cols != cols || out.data.size() != rows * cols) {
    out = Matrix<Real>(rows, cols);
  }
}

}  // namespace

// The two namespaces below differ only in the omp pragmas.

#define NOFT_KERNEL_DEFS(PRAGMA)                                                                \
  template <typename Real>                                                                     \
  void matmul_nt(const Matrix<Real>& lhs, const Matrix<Real>& rhs, Real scale, Matrix<Real>& out) { \
    ensure(out, lhs.rows, rhs.rows);                                                           \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(lhs.rows);                            \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t i = 0; i < n; ++i) matmul_nt_row(lhs, rhs, scale, out, i);             \
  }                                                                                            \
  template <typename Real>                                                                     \
  void matmul(const Matrix<Real>& m, const Matrix<Real>& x, Real scale, Matrix<Real>& out) {   \
    ensure(out, m.rows, x.cols);                                                               \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(m.rows);                              \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t i = 0; i < n; ++i) matmul_row(m, x, scale, out, i);                    \
  }                                                                                            \
  template <typename Real>                                                                     \
  void matmul_tn(const Matrix<Real>& m, const Matrix<Real>& x, Real scale, Matrix<Real>& out) { \
    ensure(out, m.cols, x.cols);                                                               \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(block_count(m.cols));                 \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t blk = 0; blk < n; ++blk) matmul_tn_block(m, x, scale, out, blk);       \
  }                                                                                            \
  template <typename Real>                                                                     \
  void row_logsumexp(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a, \
                     std::span<const std::type_identity_t<Real>> b,                            \
                     std::span<std::type_identity_t<Real>> r) {                                \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(logits.rows);                         \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t i = 0; i < n; ++i) row_logsumexp_row<Real>(logits, a, b, r, i);        \
  }                                                                                            \
  template <typename Real>                                                                     \
  void col_logsumexp(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a, \
                     std::span<const std::type_identity_t<Real>> b,                            \
                     std::span<std::type_identity_t<Real>> c) {                                \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(block_count(logits.cols));            \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t blk = 0; blk < n; ++blk) col_logsumexp_block<Real>(logits, a, b, c, blk); \
  }                                                                                            \
  template <typename Real>                                                                     \
  void exp_shifted(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a,   \
                   std::span<const std::type_identity_t<Real>> b, Matrix<Real>& out) {         \
    ensure(out, logits.rows, logits.cols);                                                     \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(logits.rows);                         \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t i = 0; i < n; ++i) exp_shifted_row<Real>(logits, a, b, out, i);        \
  }                                                                                            \
  template <typename Real>                                                                     \
  void plan_grad(const Matrix<Real>& plan, const Matrix<Real>& dy, const Matrix<Real>& v,      \
                 Matrix<Real>& grad) {                                                         \
    ensure(grad, plan.rows, plan.cols);                                                        \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(plan.rows);                           \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t i = 0; i < n; ++i) plan_grad_row(plan, dy, v, grad, i);                \
  }                                                                                            \
  template <typename Real>                                                                     \
  void row_step_backward(const Matrix<Real>& logits,                                           \
                         std::span<const std::type_identity_t<Real>> a,                        \
                         std::span<const std::type_identity_t<Real>> b, Matrix<Real>& grad) {  \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(logits.rows);                         \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t i = 0; i < n; ++i) row_step_backward_row<Real>(logits, a, b, grad, i); \
  }                                                                                            \
  template <typename Real>                                                                     \
  void col_step_backward(const Matrix<Real>& logits,                                           \
                         std::span<const std::type_identity_t<Real>> a,                        \
                         std::span<const std::type_identity_t<Real>> b, Matrix<Real>& grad) {  \
    std::vector<Real> sums(logits.cols);                                                       \
    const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(block_count(logits.cols));           \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t blk = 0; blk < nb; ++blk) col_sums_block(grad, sums, blk);             \
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(logits.rows);                         \
    PRAGMA                                                                                     \
    for (std::ptrdiff_t i = 0; i < n; ++i) col_step_update_row<Real>(logits, a, b, sums, grad, i); \
  }

#define NOFT_INSTANTIATE(Real)                                                                  \
  template void matmul_nt(const Matrix<Real>&, const Matrix<Real>&, Real, Matrix<Real>&);       \
  template void matmul(const Matrix<Real>&, const Matrix<Real>&, Real, Matrix<Real>&);          \
  template void matmul_tn(const Matrix<Real>&, const Matrix<Real>&, Real, Matrix<Real>&);       \
  template void row_logsumexp<Real>(const Matrix<Real>&, std::span<const Real>,                 \
                                    std::span<const Real>, std::span<Real>);                    \
  template void col_logsumexp<Real>(const Matrix<Real>&, std::span<const Real>,                 \
                                    std::span<const Real>, std::span<Real>);                    \
  template void exp_shifted<Real>(const Matrix<Real>&, std::span<const Real>,                   \
                                  std::span<const Real>, Matrix<Real>&);                        \
  template void plan_grad(const Matrix<Real>&, const Matrix<Real>&, const Matrix<Real>&,        \
                          Matrix<Real>&);                                                       \
  template void row_step_backward<Real>(const Matrix<Real>&, std::span<const Real>,             \
                                        std::span<const Real>, Matrix<Real>&);                  \
  template void col_step_backward<Real>(const Matrix<Real>&, std::span<const Real>,             \
                                        std::span<const Real>, Matrix<Real>&);

#define NOFT_NO_PRAGMA
#define NOFT_OMP_FOR _Pragma("omp parallel for schedule(static)")

namespace serial {
NOFT_KERNEL_DEFS(NOFT_NO_PRAGMA)
NOFT_INSTANTIATE(float)
NOFT_INSTANTIATE(double)
}  // namespace serial

namespace parallel {
NOFT_KERNEL_DEFS(NOFT_OMP_FOR)
NOFT_INSTANTIATE(float)
NOFT_INSTANTIATE(double)
}  // namespace parallel

}  // namespace noft::kernels
