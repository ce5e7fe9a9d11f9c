#include "graphgp/classifier.hpp"
#include "graphgp/kernels.hpp"
#include "graphgp/regression.hpp"
#include "graphgp/spectral.hpp"

#include <benchmark/benchmark.h>

#include <memory>
#include <random>
#include <vector>

using namespace graphgp;

namespace {

// Ring plus random chords, average degree about 6.
WeightedGraph bench_graph(int n) {
  std::mt19937_64 rng(n);
  std::uniform_int_distribution<int> node(0, n - 1);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) edges.push_back({i, (i + 1) % n, 1.0});
  for (int k = 0; k < 2 * n; ++k) {
    const int u = node(rng), v = node(rng);
    if (u != v) edges.push_back({u, v, 1.0});
  }
  return WeightedGraph(n, std::move(edges));
}

std::vector<int> first(int k) {
  std::vector<int> v(k);
  for (int i = 0; i < k; ++i) v[i] = i * 2;
  return v;
}

void BM_DenseEigen(benchmark::State& state) {
  const auto L = build_laplacian(bench_graph(state.range(0)), LaplacianKind::sym_normalized);
  for (auto _ : state) benchmark::DoNotOptimize(eigendecompose_full(L));
}
BENCHMARK(BM_DenseEigen)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_Lanczos(benchmark::State& state) {
  const auto L = build_laplacian(bench_graph(state.range(0)), LaplacianKind::sym_normalized);
  for (auto _ : state) benchmark::DoNotOptimize(eigendecompose_truncated(L, state.range(1)));
}
BENCHMARK(BM_Lanczos)->Args({1024, 50})->Args({4096, 50})->Unit(benchmark::kMillisecond);

void BM_KernelMatrix(benchmark::State& state) {
  const int n = state.range(0);
  const auto basis = eigendecompose_full(build_laplacian(bench_graph(n), LaplacianKind::unnormalized));
  KernelSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(kernel_matrix(basis, spec));
}
BENCHMARK(BM_KernelMatrix)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_LogMarginalLikelihood(benchmark::State& state) {
  const int n = 1024;
  const auto basis = std::make_shared<SpectralBasis>(
      eigendecompose_full(build_laplacian(bench_graph(n), LaplacianKind::unnormalized)));
  const int m = state.range(0);
  GPRegressionModel model(basis, KernelSpec{}, 0.01, first(m), Eigen::VectorXd::LinSpaced(m, -1, 1));
  for (auto _ : state) benchmark::DoNotOptimize(model.log_marginal_likelihood());
}
BENCHMARK(BM_LogMarginalLikelihood)->Arg(100)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_GmrfPosterior(benchmark::State& state) {
  const int n = state.range(0);
  const auto L = build_laplacian(bench_graph(n), LaplacianKind::unnormalized);
  const auto Q = matern_precision_sparse(L, state.range(1), 3.0);
  const auto x = first(n / 10);
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(x.size(), -1, 1);
  const auto q = first(100);
  for (auto _ : state) benchmark::DoNotOptimize(gmrf_posterior(Q, 0.01, x, y, q, CovarianceMode::diagonal));
}
BENCHMARK(BM_GmrfPosterior)->Args({1024, 1})->Args({4096, 1})->Args({1024, 2})->Unit(benchmark::kMillisecond);

void BM_ElboGradients(benchmark::State& state) {
  const int n = 1024, m = state.range(0);
  const auto basis = std::make_shared<SpectralBasis>(
      eigendecompose_full(build_laplacian(bench_graph(n), LaplacianKind::unnormalized)));
  const auto z = first(m);
  std::vector<int> labels(m);
  for (int i = 0; i < m; ++i) labels[i] = i % 7;
  KernelSpec spec;
  spec.nu = 3.0;
  spec.kappa = 5.0;
  const VariationalClassifier model(basis, spec, 7, z);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd noise(m, 20);
  for (auto& e : noise.reshaped()) e = normal(rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.elbo_gradients(z, labels, noise, m, true));
}
BENCHMARK(BM_ElboGradients)->Arg(140)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
