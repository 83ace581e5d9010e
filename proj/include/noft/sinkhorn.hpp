#pragma once

#include <cstddef>
#include <vector>

#include "noft/kernels.hpp"
#include "noft/matrix.hpp"

namespace noft::sinkhorn {

/// Entropic OT instance: min <T, C> - epsilon * H(T) over plans with
/// row marginals mu and column marginals nu.
struct OtProblem {
  Matrix<double> cost;
  std::vector<double> mu;
  std::vector<double> nu;
  double epsilon = 1.0;
};

struct TransportPlan {
  Matrix<double> plan;
  std::size_t iterations_used = 0;
  /// ||T 1 - mu||_1, the gated quantity.
  double residual = 0.0;
  /// ||T^T 1 - nu||_1, reported only.
  double column_residual = 0.0;
  bool converged = false;
};

/// Throws Shape / Parameter / Domain errors for malformed problems.
void validate(const OtProblem& problem);

/// Multiplicative-domain Sinkhorn: u <- mu / (K v), v <- nu / (K^T u) with
/// K = exp(-C / epsilon). Stops once the row residual drops below tol or
/// after max_iters sweeps. Zero marginal entries pin their scaling to 0.
/// Throws ErrorKind::Instability if the Gibbs kernel over- or underflows
/// in a way that breaks the scaling.
TransportPlan solve(const OtProblem& problem, double tol = 1e-9, std::size_t max_iters = 10000,
                    kernels::Backend backend = kernels::Backend::Parallel);

/// -sum T_ij log T_ij with 0 log 0 = 0.
double entropy(const Matrix<double>& plan);
inline double entropy(const TransportPlan& plan) { return entropy(plan.plan); }

/// Frobenius inner product <T, C>.
double transport_cost(const Matrix<double>& plan, const Matrix<double>& cost);
inline double transport_cost(const TransportPlan& plan, const Matrix<double>& cost) {
  return transport_cost(plan.plan, cost);
}

/// Uniform marginals 1/n.
std::vector<double> uniform_marginal(std::size_t n);

}  // namespace noft::sinkhorn
