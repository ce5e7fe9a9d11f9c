#include "graphgp/error.hpp"
#include "graphgp/log.hpp"
#include "graphgp/regression.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace graphgp {
namespace {

using testing::dense_conditional;

std::shared_ptr<const SpectralBasis> full(const WeightedGraph& g, LaplacianKind kind = LaplacianKind::unnormalized) {
  return std::make_shared<SpectralBasis>(eigendecompose_full(build_laplacian(g, kind)));
}

KernelSpec matern(double nu, double kappa, double sigma2 = 1.0) {
  KernelSpec s;
  s.nu = nu;
  s.kappa = kappa;
  s.sigma2 = sigma2;
  return s;
}

Eigen::VectorXd random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

TEST(Posterior, PathGraphMatchesDenseConditional) {
  const auto basis = full(testing::path_graph(3));
  const auto spec = matern(1.0, 1.0);
  GPRegressionModel model(basis, spec, 0.1, {2}, Eigen::VectorXd::Constant(1, 0.7));
  const auto q = testing::iota(3);
  const auto post = model.posterior(q);
  const auto oracle = dense_conditional(kernel_matrix(*basis, spec), {2}, Eigen::VectorXd::Constant(1, 0.7), 0.1, q);
  EXPECT_LE((post.mean - oracle.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((post.covariance - oracle.cov).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((post.variance - oracle.cov.diagonal()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Posterior, HugeNoiseReturnsPrior) {
  std::mt19937_64 rng(1);
  const auto basis = full(testing::random_graph(12, 0.3, rng));
  const Eigen::VectorXd y = random_vector(4, rng);
  ScopedWarningCapture quiet;
  GPRegressionModel model(basis, matern(1.5, 2.0), 1e12, {0, 3, 5, 7}, y);
  const auto post = model.posterior(testing::iota(12), CovarianceMode::diagonal);
  EXPECT_LE(post.mean.cwiseAbs().maxCoeff(), 1e-6 * y.norm());
  EXPECT_EQ(post.covariance.size(), 0);
}

TEST(Posterior, TinyNoiseInterpolates) {
  std::mt19937_64 rng(2);
  const auto basis = full(testing::random_connected_graph(10, 0.3, rng));
  const Eigen::VectorXd y = random_vector(3, rng);
  ScopedWarningCapture quiet;
  GPRegressionModel model(basis, matern(1.5, 2.0), 1e-10, {1, 4, 8}, y);
  const std::vector<int> q{1, 4, 8};
  EXPECT_LE((model.posterior(q).mean - y).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Posterior, EmptyTrainingSetIsPrior) {
  const auto basis = full(testing::path_graph(4));
  const auto spec = matern(2.0, 1.5);
  GPRegressionModel model(basis, spec, 0.1, {}, Eigen::VectorXd());
  const auto post = model.posterior(testing::iota(4));
  EXPECT_EQ(post.mean, Eigen::VectorXd::Zero(4));
  EXPECT_LE((post.covariance - kernel_matrix(*basis, spec)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(model.posterior(std::vector<int>{}).mean.size(), 0);
}

TEST(Posterior, RejectsInvalidInput) {
  const auto basis = full(testing::path_graph(4));
  EXPECT_THROW(GPRegressionModel(basis, matern(1, 1), 0.0, {0}, Eigen::VectorXd::Ones(1)), InvalidArgument);
  EXPECT_THROW(GPRegressionModel(basis, matern(1, 1), 0.1, {0, 1}, Eigen::VectorXd::Ones(1)), InvalidArgument);
  EXPECT_THROW(GPRegressionModel(basis, matern(1, 1), 0.1, {9}, Eigen::VectorXd::Ones(1)), InvalidArgument);
}

TEST(Posterior, ConditioningWarning) {
  const auto basis = full(testing::complete_graph(6));
  KernelSpec spec = matern(1.0, 50.0, 1e8);
  spec.family = KernelFamily::diffusion;  // only the constant mode survives, so K_xx has rank one
  ScopedWarningCapture capture;
  GPRegressionModel model(basis, spec, 1e-9, {0, 1, 2, 3}, Eigen::VectorXd::Ones(4));
  bool saw = false;
  for (const auto& m : capture.messages()) saw = saw || m.find("ill-conditioned") != std::string::npos;
  EXPECT_TRUE(saw);
}

TEST(PosteriorProperty, VarianceNeverExceedsPrior) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + static_cast<int>(rng() % 30);
    const auto basis = full(testing::random_graph(n, 0.2, rng));
    const auto spec = matern(0.5 + 3.0 * (trial % 4) / 3.0, 0.5 + trial % 3);
    const auto x = testing::sample_nodes(n, 1 + static_cast<int>(rng() % n), rng);
    GPRegressionModel model(basis, spec, 0.05, x, random_vector(static_cast<int>(x.size()), rng));
    const auto q = testing::iota(n);
    const Eigen::VectorXd prior = kernel_diagonal(*basis, spec, q);
    const auto post = model.posterior(q, CovarianceMode::diagonal);
    EXPECT_LE((post.variance - prior).maxCoeff(), 1e-10);
  }
}

TEST(Woodbury, FullBasisAllNodes) {
  std::mt19937_64 rng(4);
  const int n = 20;
  const auto basis = full(testing::random_graph(n, 0.25, rng));
  const auto x = testing::iota(n);
  GPRegressionModel model(basis, matern(1.5, 2.0), 0.2, x, random_vector(n, rng));
  const auto a = model.posterior(x);
  const auto b = model.woodbury_posterior(x);
  EXPECT_LE((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((a.covariance - b.covariance).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(WoodburyProperty, MatchesDenseInverseOnRandomConfigurations) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 61);
    const auto kind = trial % 2 ? LaplacianKind::sym_normalized : LaplacianKind::unnormalized;
    const auto basis = full(testing::random_graph(n, 0.15, rng), kind);
    KernelSpec spec = trial % 3 == 0 ? matern(2.5, 1.5) : matern(1.0, 3.0);
    if (trial % 5 == 0) spec.family = KernelFamily::diffusion;
    spec.laplacian = kind;
    spec.normalize_variance = trial % 2 == 0;
    const auto x = testing::sample_nodes(n, 1 + static_cast<int>(rng() % n), rng);
    const Eigen::VectorXd y = random_vector(static_cast<int>(x.size()), rng);
    const double noise = 0.05 + 0.1 * (trial % 3);
    GPRegressionModel model(basis, spec, noise, x, y);
    const auto q = testing::sample_nodes(n, std::min(n, 10), rng);
    const auto oracle = dense_conditional(kernel_matrix(*basis, spec), x, y, noise, q);
    const auto w = model.woodbury_posterior(q);
    EXPECT_LE((w.mean - oracle.mean).cwiseAbs().maxCoeff(), 1e-8) << "trial " << trial;
    EXPECT_LE((w.covariance - oracle.cov).cwiseAbs().maxCoeff(), 1e-8) << "trial " << trial;
  }
}

TEST(Woodbury, TruncatedBasisUsesRankEllKernel) {
  std::mt19937_64 rng(6);
  const int n = 64;
  const auto g = testing::random_connected_graph(n, 0.06, rng);
  const auto L = build_laplacian(g, LaplacianKind::unnormalized);
  const auto basis = std::make_shared<SpectralBasis>(eigendecompose_truncated(L, n / 2));
  const auto spec = matern(1.5, 3.0);
  const auto x = testing::sample_nodes(n, 25, rng);
  const Eigen::VectorXd y = random_vector(25, rng);
  GPRegressionModel model(basis, spec, 0.1, x, y);
  const Eigen::MatrixXd K_rank = kernel_matrix(*basis, spec);  // U_l diag(w) U_l^T
  const auto q = testing::iota(n);
  const auto oracle = dense_conditional(K_rank, x, y, 0.1, q);
  const auto w = model.woodbury_posterior(q);
  EXPECT_LE((w.mean - oracle.mean).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((w.covariance - oracle.cov).cwiseAbs().maxCoeff(), 1e-8);
  const auto d = model.posterior(q);
  EXPECT_LE((d.mean - oracle.mean).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Woodbury, ZeroWeightModesDroppedWithWarning) {
  const auto basis = full(WeightedGraph(2, {{0, 1, 1.0}}), LaplacianKind::sym_normalized);
  KernelSpec spec;
  spec.family = KernelFamily::inverse_cosine;  // weight cos(pi/2), zero up to round-off, on the top mode
  spec.laplacian = LaplacianKind::sym_normalized;
  GPRegressionModel model(basis, spec, 0.3, {0}, Eigen::VectorXd::Constant(1, 1.0));
  ScopedWarningCapture capture;
  const auto w = model.woodbury_posterior(std::vector<int>{0, 1});
  EXPECT_FALSE(capture.messages().empty());
  const auto d = model.posterior(std::vector<int>{0, 1});
  EXPECT_LE((w.mean - d.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((w.covariance - d.covariance).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LogMarginal, PureNoiseLimit) {
  std::mt19937_64 rng(7);
  const auto basis = full(testing::random_graph(8, 0.4, rng));
  const Eigen::VectorXd y = random_vector(5, rng);
  GPRegressionModel model(basis, matern(1.5, 2.0, 1e-12), 0.3, {0, 1, 2, 3, 4}, y);
  double expected = 0.0;
  for (double v : y) expected += -0.5 * std::log(2 * std::numbers::pi * 0.3) - v * v / (2 * 0.3);
  EXPECT_NEAR(model.log_marginal_likelihood().value, expected, 1e-9);
}

TEST(LogMarginal, SingleEdgeScalarOracle) {
  const auto basis = full(WeightedGraph(2, {{0, 1, 1.0}}));
  GPRegressionModel model(basis, matern(1.0, std::sqrt(2.0)), 1.0, {0}, Eigen::VectorXd::Constant(1, 1.0));
  // K = inverse of [[2,-1],[-1,2]] so K_00 = 2/3, marginal variance 5/3.
  const double var = 2.0 / 3.0 + 1.0;
  const double expected = -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 / var;
  EXPECT_NEAR(model.log_marginal_likelihood().value, expected, 1e-12);
}

// Central differences in the softplus coordinates used by the optimizer.
void check_gradient(GPRegressionModel& model, double tol) {
  const RegressionParameterization param(model.spec(), {});
  const Eigen::VectorXd u = param.pack(model.spec(), model.noise_variance());
  const auto lml = model.log_marginal_likelihood();
  const Eigen::VectorXd analytic = param.pull_back(u, lml.gradient);
  const KernelSpec base_spec = model.spec();
  const double base_noise = model.noise_variance();
  const double h = 1e-5;
  for (int i = 0; i < param.size(); ++i) {
    auto eval = [&](double delta) {
      Eigen::VectorXd v = u;
      v[i] += delta;
      KernelSpec s = base_spec;
      double noise = base_noise;
      param.unpack(v, s, noise);
      model.set_hyperparameters(s, noise);
      return model.log_marginal_likelihood().value;
    };
    const double fd = (eval(h) - eval(-h)) / (2 * h);
    EXPECT_LE(std::abs(fd - analytic[i]), tol * std::max(std::abs(fd), 1e-3)) << param.names()[i];
  }
  model.set_hyperparameters(base_spec, base_noise);
}

TEST(LogMarginalProperty, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 24;
    const auto kind = trial % 2 ? LaplacianKind::sym_normalized : LaplacianKind::unnormalized;
    const auto basis = full(testing::random_graph(n, 0.2, rng), kind);
    KernelSpec spec = matern(0.8 + 0.4 * trial, 0.7 + 0.3 * trial, 0.5 + 0.2 * trial);
    if (trial % 4 == 3) spec.family = KernelFamily::diffusion;
    spec.laplacian = kind;
    spec.normalize_variance = trial % 3 != 0;
    const auto x = testing::sample_nodes(n, 15, rng);
    GPRegressionModel model(basis, spec, 0.05 + 0.05 * trial, x, random_vector(15, rng));
    check_gradient(model, 1e-4);
  }
}

TEST(LogMarginal, SigmaOnlyGradientForMatrixFamilies) {
  std::mt19937_64 rng(9);
  const auto basis = full(testing::random_graph(12, 0.3, rng), LaplacianKind::sym_normalized);
  KernelSpec spec;
  spec.family = KernelFamily::random_walk;
  spec.alpha = 0.4;
  spec.p = 3;
  spec.laplacian = LaplacianKind::sym_normalized;
  GPRegressionModel model(basis, spec, 0.1, {0, 2, 4, 6}, random_vector(4, rng));
  const auto lml = model.log_marginal_likelihood();
  EXPECT_EQ(lml.gradient[static_cast<int>(Hyper::kappa)], 0.0);
  EXPECT_EQ(lml.gradient[static_cast<int>(Hyper::nu)], 0.0);
  check_gradient(model, 1e-4);
}

TEST(Fit, ZeroIterationsKeepsInitialization) {
  std::mt19937_64 rng(10);
  const auto basis = full(testing::random_graph(15, 0.3, rng));
  const auto spec = matern(1.5, 3.0);
  GPRegressionModel model(basis, spec, 0.01, {0, 1, 2, 3}, random_vector(4, rng));
  AdamConfig cfg;
  cfg.iterations = 0;
  const auto r = fit(model, cfg);
  EXPECT_EQ(model.spec(), spec);
  EXPECT_EQ(model.noise_variance(), 0.01);
  EXPECT_EQ(r.loss_trace.size(), 1u);
}

TEST(Fit, DefaultsFollowReferenceProtocol) {
  const AdamConfig cfg;
  EXPECT_EQ(cfg.iterations, 20000);
  EXPECT_EQ(cfg.learning_rate, 1e-3);
  const KernelSpec spec;
  EXPECT_EQ(spec.nu, 1.5);
  EXPECT_EQ(spec.kappa, 3.0);
  EXPECT_EQ(spec.sigma2, 1.0);
}

TEST(Fit, DoesNotIncreaseLossOnPriorDraw) {
  std::mt19937_64 rng(11);
  const int n = 60;
  const auto basis = full(testing::random_connected_graph(n, 0.05, rng));
  KernelSpec truth = matern(2.0, 2.0);
  truth.normalize_variance = true;
  const Eigen::MatrixXd K = kernel_matrix(*basis, truth);
  const Eigen::MatrixXd Lk = Eigen::LLT<Eigen::MatrixXd>(K + 1e-10 * Eigen::MatrixXd::Identity(n, n)).matrixL();
  const Eigen::VectorXd f = Lk * random_vector(n, rng);
  const auto x = testing::sample_nodes(n, 40, rng);
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) y[i] = f[x[i]] + 0.1 * random_vector(1, rng)[0];

  KernelSpec init = matern(1.5, 3.0);
  init.normalize_variance = true;
  GPRegressionModel model(basis, init, 0.01, x, y);
  const double initial = -model.log_marginal_likelihood().value;
  AdamConfig cfg;
  cfg.iterations = 300;
  cfg.learning_rate = 0.05;
  const auto r = fit(model, cfg);
  const double final_loss = -model.log_marginal_likelihood().value;
  EXPECT_LE(final_loss, initial);
  EXPECT_NEAR(final_loss, r.best_loss_trace.back(), 1e-9);
  for (std::size_t i = 1; i < r.best_loss_trace.size(); ++i) EXPECT_LE(r.best_loss_trace[i], r.best_loss_trace[i - 1]);
  EXPECT_GT(model.spec().kappa, 0.0);
  EXPECT_GT(model.noise_variance(), 1e-6);

  // Deterministic: a second run lands on identical parameters.
  GPRegressionModel again(basis, init, 0.01, x, y);
  fit(again, cfg);
  EXPECT_EQ(again.spec(), model.spec());
  EXPECT_EQ(again.noise_variance(), model.noise_variance());
}

TEST(Fit, TrainableSubset) {
  std::mt19937_64 rng(12);
  const auto basis = full(testing::random_graph(15, 0.3, rng));
  GPRegressionModel model(basis, matern(1.5, 3.0), 0.1, {0, 1, 2, 3, 4}, random_vector(5, rng));
  AdamConfig cfg;
  cfg.iterations = 20;
  cfg.learning_rate = 0.1;
  fit(model, cfg, {.kappa = false, .nu = false, .sigma2 = true, .noise = false});
  EXPECT_EQ(model.spec().kappa, 3.0);
  EXPECT_EQ(model.spec().nu, 1.5);
  EXPECT_EQ(model.noise_variance(), 0.1);
}

TEST(Pathwise, ThreeNodeMomentsMatchPosterior) {
  const auto basis = full(testing::path_graph(3));
  GPRegressionModel model(basis, matern(1.0, 1.0), 0.2, {0}, Eigen::VectorXd::Constant(1, 1.0));
  const auto q = testing::iota(3);
  const int S = 100000;
  const Eigen::MatrixXd samples = model.pathwise_sample(q, 42, S);
  const auto post = model.posterior(q);
  const Eigen::VectorXd mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / (S - 1);
  for (int i = 0; i < 3; ++i) {
    const double se_mean = std::sqrt(post.covariance(i, i) / S);
    EXPECT_LE(std::abs(mean[i] - post.mean[i]), 4 * se_mean);
    for (int j = 0; j < 3; ++j) {
      const double s = post.covariance(i, j);
      const double se_cov = std::sqrt((post.covariance(i, i) * post.covariance(j, j) + s * s) / S);
      EXPECT_LE(std::abs(cov(i, j) - s), 4 * se_cov) << i << "," << j;
    }
  }
  EXPECT_EQ(model.pathwise_sample(q, 42, 10), model.pathwise_sample(q, 42, 10));
}

TEST(Pathwise, HugeNoiseSamplesPrior) {
  const auto basis = full(testing::path_graph(4));
  const auto spec = matern(1.5, 1.0);
  ScopedWarningCapture quiet;
  GPRegressionModel model(basis, spec, 1e12, {0, 1}, Eigen::Vector2d(5.0, -5.0));
  const int S = 50000;
  const Eigen::MatrixXd samples = model.pathwise_sample(testing::iota(4), 3, S);
  const Eigen::MatrixXd K = kernel_matrix(*basis, spec);
  for (int i = 0; i < 4; ++i) {
    EXPECT_LE(std::abs(samples.row(i).mean()), 3 * std::sqrt(K(i, i) / S));
    const double var = samples.row(i).squaredNorm() / S;
    EXPECT_LE(std::abs(var - K(i, i)), 3 * std::sqrt(2.0 / S) * K(i, i) + 1e-12);
  }
}

TEST(Pathwise, TinyNoiseInterpolates) {
  std::mt19937_64 rng(13);
  const auto basis = full(testing::random_connected_graph(8, 0.3, rng));
  ScopedWarningCapture quiet;
  const Eigen::VectorXd y = random_vector(3, rng);
  GPRegressionModel model(basis, matern(1.5, 2.0), 1e-10, {1, 3, 5}, y);
  const Eigen::MatrixXd s = model.pathwise_sample(std::vector<int>{1, 3, 5}, 9, 20);
  EXPECT_LE((s.colwise() - y).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Gmrf, SingleEdgeMatchesDenseConditional) {
  const WeightedGraph g(2, {{0, 1, 1.0}});
  const auto L = build_laplacian(g, LaplacianKind::unnormalized);
  const auto Q = matern_precision_sparse(L, 1, 1.0);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 0.4);
  const auto post = gmrf_posterior(Q, 0.2, std::vector<int>{0}, y, std::vector<int>{0, 1});
  const auto oracle = dense_conditional(Eigen::MatrixXd(Q).inverse(), {0}, y, 0.2, {0, 1});
  EXPECT_LE((post.mean - oracle.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((post.covariance - oracle.cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gmrf, NoObservationsGivesPriorVariance) {
  std::mt19937_64 rng(14);
  const auto L = build_laplacian(testing::random_graph(15, 0.2, rng), LaplacianKind::unnormalized);
  const auto Q = matern_precision_sparse(L, 2, 1.2);
  const auto post = gmrf_posterior(Q, 0.1, std::vector<int>{}, Eigen::VectorXd(), testing::iota(15),
                                   CovarianceMode::diagonal);
  EXPECT_LE((post.variance - Eigen::MatrixXd(Q).inverse().diagonal()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(post.mean, Eigen::VectorXd::Zero(15));
}

TEST(Gmrf, AllObservedTinyNoiseRecoversTargets) {
  std::mt19937_64 rng(15);
  const auto L = build_laplacian(testing::random_graph(10, 0.3, rng), LaplacianKind::unnormalized);
  const Eigen::VectorXd y = random_vector(10, rng);
  const auto post = gmrf_posterior(matern_precision_sparse(L, 1, 1.0), 1e-10, testing::iota(10), y, testing::iota(10));
  EXPECT_LE((post.mean - y).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(GmrfProperty, MatchesSpectralPosterior) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 6 + static_cast<int>(rng() % 59);
    const auto g = testing::random_graph(n, 0.1, rng);
    const auto L = build_laplacian(g, LaplacianKind::unnormalized);
    const auto basis = std::make_shared<SpectralBasis>(eigendecompose_full(L));
    const int nu = 1 + trial % 2;
    const auto x = testing::sample_nodes(n, 1 + static_cast<int>(rng() % n), rng);
    const Eigen::VectorXd y = random_vector(static_cast<int>(x.size()), rng);
    GPRegressionModel model(basis, matern(nu, 1.3), 0.1, x, y);
    const auto q = testing::iota(n);
    const auto a = model.posterior(q);
    const auto b = gmrf_posterior(matern_precision_sparse(L, nu, 1.3), 0.1, x, y, q);
    EXPECT_LE((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((a.covariance - b.covariance).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Gmrf, RejectsInvalidInput) {
  const auto L = build_laplacian(testing::path_graph(3), LaplacianKind::unnormalized);
  const auto Q = matern_precision_sparse(L, 1, 1.0);
  EXPECT_THROW(gmrf_posterior(Q, 0.0, std::vector<int>{0}, Eigen::VectorXd::Ones(1), std::vector<int>{0}),
               InvalidArgument);
  EXPECT_THROW(gmrf_posterior(Q, 0.1, std::vector<int>{5}, Eigen::VectorXd::Ones(1), std::vector<int>{0}),
               InvalidArgument);
}

}  // namespace
}  // namespace graphgp
