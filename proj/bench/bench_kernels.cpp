// Serial reference vs OpenMP kernels. Run with OMP_NUM_THREADS=n to vary the team.

#include <benchmark/benchmark.h>

#include <span>
#include <vector>

#include "noft/attention.hpp"
#include "noft/kernels.hpp"
#include "noft/tensor.hpp"

namespace {

using noft::Matrix;
using noft::kernels::Backend;

Matrix<double> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  noft::Rng rng(seed);
  Matrix<double> m(r, c);
  for (double& x : m.data) x = rng.normal();
  return m;
}

Backend backend_of(const benchmark::State& state) {
  return state.range(1) == 0 ? Backend::Serial : Backend::Parallel;
}

void label(benchmark::State& state) { state.SetLabel(state.range(1) == 0 ? "serial" : "parallel"); }

void BM_MatmulNT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix(n, 4, 1);
  const auto k = random_matrix(n, 4, 2);
  Matrix<double> out(n, n);
  for (auto _ : state) {
    noft::kernels::matmul_nt(backend_of(state), q, k, 0.5, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  label(state);
}

void BM_RowLogSumExp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a0 = random_matrix(n, n, 3);
  const std::vector<double> a(n, 0.1), b(n, -0.2);
  std::vector<double> r(n);
  for (auto _ : state) {
    noft::kernels::row_logsumexp(backend_of(state), a0, std::span<const double>(a), std::span<const double>(b), std::span<double>(r));
    benchmark::DoNotOptimize(r.data());
  }
  label(state);
}

void BM_ColLogSumExp(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a0 = random_matrix(n, n, 4);
  const std::vector<double> a(n, 0.1), b(n, -0.2);
  std::vector<double> c(n);
  for (auto _ : state) {
    noft::kernels::col_logsumexp(backend_of(state), a0, std::span<const double>(a), std::span<const double>(b), std::span<double>(c));
    benchmark::DoNotOptimize(c.data());
  }
  label(state);
}

void BM_RowStepBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a0 = random_matrix(n, n, 5);
  const auto g0 = random_matrix(n, n, 6);
  const std::vector<double> a(n, 0.1), b(n, -0.2);
  Matrix<double> g = g0;
  for (auto _ : state) {
    g.data = g0.data;
    noft::kernels::row_step_backward(backend_of(state), a0, std::span<const double>(a), std::span<const double>(b), g);
    benchmark::DoNotOptimize(g.data.data());
  }
  label(state);
}

void BM_ColStepBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a0 = random_matrix(n, n, 7);
  const auto g0 = random_matrix(n, n, 8);
  const std::vector<double> a(n, 0.1), b(n, -0.2);
  Matrix<double> g = g0;
  for (auto _ : state) {
    g.data = g0.data;
    noft::kernels::col_step_backward(backend_of(state), a0, std::span<const double>(a), std::span<const double>(b), g);
    benchmark::DoNotOptimize(g.data.data());
  }
  label(state);
}

void BM_AttentionLayer(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  noft::Rng rng(9);
  const noft::Tensor64 x = noft::gaussian_sample({4, side, side}, rng).cast<double>();
  const auto params = noft::attention::AttentionParams::random(4, 2, 1, rng);
  noft::attention::Options options;
  options.backend = backend_of(state);
  for (auto _ : state) {
    auto out = noft::attention::sinkhorn_attention(x, params, options);
    benchmark::DoNotOptimize(out.output.values().data());
  }
  state.SetLabel((state.range(1) == 0 ? "serial L=" : "parallel L=") + std::to_string(side * side));
}

void kernel_sizes(benchmark::internal::Benchmark* b) {
  for (int n : {64, 256, 1024, 4096})
    for (int backend : {0, 1}) b->Args({n, backend});
}

}  // namespace

BENCHMARK(BM_MatmulNT)->Apply(kernel_sizes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_RowLogSumExp)->Apply(kernel_sizes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ColLogSumExp)->Apply(kernel_sizes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_RowStepBackward)->Apply(kernel_sizes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ColStepBackward)->Apply(kernel_sizes)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AttentionLayer)->ArgsProduct({{16, 32, 64}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
