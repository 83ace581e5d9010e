#include "noft/sinkhorn.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "noft/error.hpp"

namespace noft::sinkhorn {
namespace {

void check_marginal(const std::vector<double>& m, const char* name) {
  double total = 0.0;
  for (double x : m) {
    if (!std::isfinite(x) || x < 0.0) {
      throw Error(ErrorKind::Domain, std::string(name) + " has a negative or non-finite entry");
    }
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::Domain, std::string(name) + " does not sum to 1");
  }
}

// a / b with 0 / 0 = 0 for empty marginal entries.
double safe_ratio(double a, double b) {
  if (a == 0.0) return 0.0;
  if (b == 0.0 || !std::isfinite(b)) {
    throw Error(ErrorKind::Instability, "Gibbs kernel underflow: scaling denominator is zero");
  }
  const double r = a / b;
  if (!std::isfinite(r)) throw Error(ErrorKind::Instability, "Sinkhorn scaling overflowed");
  return r;
}

}  // namespace

void validate(const OtProblem& problem) {
  const auto& c = problem.cost;
  if (c.rows == 0 || c.cols == 0 || c.data.size() != c.rows * c.cols) {
    throw Error(ErrorKind::Shape, "cost matrix is empty or malformed");
  }
  if (problem.mu.size() != c.rows || problem.nu.size() != c.cols) {
    throw Error(ErrorKind::Shape, "marginal lengths " + std::to_string(problem.mu.size()) + "/" +
                                      std::to_string(problem.nu.size()) + " do not match cost " +
                                      std::to_string(c.rows) + "x" + std::to_string(c.cols));
  }
  if (!(problem.epsilon > 0.0) || !std::isfinite(problem.epsilon)) {
    throw Error(ErrorKind::Parameter, "epsilon must be positive");
  }
  for (double x : c.data) {
    if (!std::isfinite(x)) throw Error(ErrorKind::Domain, "cost has a non-finite entry");
  }
  check_marginal(problem.mu, "mu");
  check_marginal(problem.nu, "nu");
}

TransportPlan solve(const OtProblem& problem, double tol, std::size_t max_iters,
                    kernels::Backend backend) {
  validate(problem);
  if (!(tol > 0.0)) throw Error(ErrorKind::Parameter, "tol must be positive");
  if (max_iters == 0) throw Error(ErrorKind::Parameter, "max_iters must be at least 1");

  const std::size_t m = problem.cost.rows;
  const std::size_t n = problem.cost.cols;

  Matrix<double> gibbs(m, n);
  for (std::size_t i = 0; i < gibbs.data.size(); ++i) {
    gibbs.data[i] = std::exp(-problem.cost.data[i] / problem.epsilon);
    if (!std::isfinite(gibbs.data[i])) {
      throw Error(ErrorKind::Instability, "exp(-C/epsilon) overflows; epsilon too small");
    }
  }

  Matrix<double> u(m, 1, 0.0);
  Matrix<double> v(n, 1, 1.0);
  Matrix<double> kv;
  Matrix<double> ktu;
  kernels::matmul(backend, gibbs, v, 1.0, kv);

  TransportPlan result;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    for (std::size_t i = 0; i < m; ++i) u.data[i] = safe_ratio(problem.mu[i], kv.data[i]);
    kernels::matmul_tn(backend, gibbs, u, 1.0, ktu);
    for (std::size_t j = 0; j < n; ++j) v.data[j] = safe_ratio(problem.nu[j], ktu.data[j]);
    kernels::matmul(backend, gibbs, v, 1.0, kv);

    double residual = 0.0;
    for (std::size_t i = 0; i < m; ++i) residual += std::abs(u.data[i] * kv.data[i] - problem.mu[i]);
    result.iterations_used = it;
    result.residual = residual;
    if (residual < tol) {
      result.converged = true;
      break;
    }
  }

  result.plan = Matrix<double>(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) result.plan(i, j) = u.data[i] * gibbs(i, j) * v.data[j];
  }
  double col_residual = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += result.plan(i, j);
    col_residual += std::abs(s - problem.nu[j]);
  }
  result.column_residual = col_residual;
  return result;
}

double entropy(const Matrix<double>& plan) {
  double h = 0.0;
  for (double t : plan.data) {
    if (t < 0.0 || !std::isfinite(t)) throw Error(ErrorKind::Domain, "plan has a negative entry");
    if (t > 0.0) h -= t * std::log(t);
  }
  return h;
}

double transport_cost(const Matrix<double>& plan, const Matrix<double>& cost) {
  if (plan.rows != cost.rows || plan.cols != cost.cols) {
    throw Error(ErrorKind::Shape, "plan and cost shapes differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < plan.data.size(); ++i) total += plan.data[i] * cost.data[i];
  return total;
}

std::vector<double> uniform_marginal(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

}  // namespace noft::sinkhorn
