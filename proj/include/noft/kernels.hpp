#pragma once

// Dense inner loops of the Sinkhorn attention and the OT solver.
//
// Every kernel exists twice: `serial` is the reference, `parallel` splits
// the same loops across OpenMP threads. Each output element is accumulated
// in the same order in both versions, so results are bitwise identical and
// independent of the thread count.
//
// Log-domain normalization never rewrites the logits. The state after any
// half-iteration is A0 - a_i - b_j, where a and b are the cumulative row
// and column log-normalizers.

#include <span>
#include <type_traits>
#include <utility>

#include "noft/matrix.hpp"

namespace noft::kernels {

enum class Backend { Serial, Parallel };

#define NOFT_KERNEL_DECLS                                                                     \
  /* out = scale * lhs * rhs^T; lhs is n x k, rhs is m x k. */                                \
  template <typename Real>                                                                    \
  void matmul_nt(const Matrix<Real>& lhs, const Matrix<Real>& rhs, Real scale, Matrix<Real>& out); \
  /* out = scale * m * x */                                                                   \
  template <typename Real>                                                                    \
  void matmul(const Matrix<Real>& m, const Matrix<Real>& x, Real scale, Matrix<Real>& out);   \
  /* out = scale * m^T * x */                                                                 \
  template <typename Real>                                                                    \
  void matmul_tn(const Matrix<Real>& m, const Matrix<Real>& x, Real scale, Matrix<Real>& out); \
  /* r_i = logsumexp_j(A0_ij - a_i - b_j) */                                                  \
  template <typename Real>                                                                    \
  void row_logsumexp(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a,                      \
                     std::span<const std::type_identity_t<Real>> b, std::span<std::type_identity_t<Real>> r);                             \
  /* c_j = logsumexp_i(A0_ij - a_i - b_j) */                                                  \
  template <typename Real>                                                                    \
  void col_logsumexp(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a,                      \
                     std::span<const std::type_identity_t<Real>> b, std::span<std::type_identity_t<Real>> c);                             \
  /* out_ij = exp(A0_ij - a_i - b_j) */                                                       \
  template <typename Real>                                                                    \
  void exp_shifted(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a,                        \
                   std::span<const std::type_identity_t<Real>> b, Matrix<Real>& out);                               \
  /* grad_ij = plan_ij * <dy_i, v_j> */                                                       \
  template <typename Real>                                                                    \
  void plan_grad(const Matrix<Real>& plan, const Matrix<Real>& dy, const Matrix<Real>& v,     \
                 Matrix<Real>& grad);                                                         \
  /* Reverse of a row normalization: grad_ij -= exp(A0_ij - a_i - b_j) * sum_k grad_ik */     \
  template <typename Real>                                                                    \
  void row_step_backward(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a,                  \
                         std::span<const std::type_identity_t<Real>> b, Matrix<Real>& grad);                        \
  /* Reverse of a column normalization: grad_ij -= exp(...) * sum_k grad_kj */                \
  template <typename Real>                                                                    \
  void col_step_backward(const Matrix<Real>& logits, std::span<const std::type_identity_t<Real>> a,                  \
                         std::span<const std::type_identity_t<Real>> b, Matrix<Real>& grad);

namespace serial {
NOFT_KERNEL_DECLS
}  // namespace serial

namespace parallel {
NOFT_KERNEL_DECLS
}  // namespace parallel

#undef NOFT_KERNEL_DECLS

#define NOFT_DISPATCH(name)                                                     \
  template <typename... Args>                                                   \
  void name(Backend backend, Args&&... args) {                                  \
    if (backend == Backend::Serial) {                                           \
      serial::name(std::forward<Args>(args)...);                                \
    } else {                                                                    \
      parallel::name(std::forward<Args>(args)...);                              \
    }                                                                           \
  }

NOFT_DISPATCH(matmul_nt)
NOFT_DISPATCH(matmul)
NOFT_DISPATCH(matmul_tn)
NOFT_DISPATCH(row_logsumexp)
NOFT_DISPATCH(col_logsumexp)
NOFT_DISPATCH(exp_shifted)
NOFT_DISPATCH(plan_grad)
NOFT_DISPATCH(row_step_backward)
NOFT_DISPATCH(col_step_backward)

#undef NOFT_DISPATCH

}  // namespace noft::kernels
