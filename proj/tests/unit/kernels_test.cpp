#include "graphgp/error.hpp"
#include "graphgp/kernels.hpp"
#include "graphgp/log.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace graphgp {
namespace {

using testing::dense_function;
using testing::dense_laplacian;

KernelSpec matern(double nu, double kappa, LaplacianKind kind = LaplacianKind::unnormalized) {
  KernelSpec s;
  s.family = KernelFamily::matern;
  s.nu = nu;
  s.kappa = kappa;
  s.laplacian = kind;
  return s;
}

KernelSpec diffusion(double kappa, LaplacianKind kind = LaplacianKind::unnormalized) {
  KernelSpec s;
  s.family = KernelFamily::diffusion;
  s.kappa = kappa;
  s.laplacian = kind;
  return s;
}

KernelSpec random_walk(double alpha, int p) {
  KernelSpec s;
  s.family = KernelFamily::random_walk;
  s.alpha = alpha;
  s.p = p;
  s.laplacian = LaplacianKind::sym_normalized;
  return s;
}

KernelSpec inverse_cosine() {
  KernelSpec s;
  s.family = KernelFamily::inverse_cosine;
  s.laplacian = LaplacianKind::sym_normalized;
  return s;
}

SpectralBasis basis_of(const WeightedGraph& g, LaplacianKind kind) { return eigendecompose_full(build_laplacian(g, kind)); }

TEST(SpectralDensity, ClosedForms) {
  EXPECT_NEAR(spectral_density(matern(1.0, std::sqrt(2.0)))(0.0), 1.0, 1e-15);
  EXPECT_NEAR(spectral_density(matern(2.0, 1.0))(1.0), 0.04, 1e-15);
  EXPECT_NEAR(spectral_density(diffusion(2.0))(1.0), std::exp(-2.0), 1e-15);
  EXPECT_NEAR(spectral_density(diffusion(2.0))(1.0), 0.135335, 1e-6);
  EXPECT_THROW(spectral_density(random_walk(0.5, 2)), InvalidArgument);
  EXPECT_THROW(spectral_density(inverse_cosine()), InvalidArgument);
}

TEST(SpectralDensity, DerivativesMatchFiniteDifferences) {
  const double h = 1e-6;
  for (double nu : {0.5, 1.5, 3.0, 7.2})
    for (double kappa : {0.3, 1.0, 4.0})
      for (double lambda : {0.0, 0.2, 1.7, 6.0}) {
        const auto d = spectral_density(matern(nu, kappa));
        const double fd_k =
            (spectral_density(matern(nu, kappa + h))(lambda) - spectral_density(matern(nu, kappa - h))(lambda)) / (2 * h);
        const double fd_n =
            (spectral_density(matern(nu + h, kappa))(lambda) - spectral_density(matern(nu - h, kappa))(lambda)) / (2 * h);
        EXPECT_NEAR(d.d_kappa(lambda), fd_k, 1e-5 * std::max(std::abs(fd_k), 1e-8));
        EXPECT_NEAR(d.d_nu(lambda), fd_n, 1e-5 * std::max(std::abs(fd_n), 1e-8));
      }
  for (double kappa : {0.3, 1.0, 4.0})
    for (double lambda : {0.2, 1.7, 6.0}) {
      const auto d = spectral_density(diffusion(kappa));
      const double fd =
          (spectral_density(diffusion(kappa + h))(lambda) - spectral_density(diffusion(kappa - h))(lambda)) / (2 * h);
      EXPECT_NEAR(d.d_kappa(lambda), fd, 1e-5 * std::abs(fd));
      EXPECT_EQ(d.d_nu(lambda), 0.0);
    }
}

TEST(SpectralDensityProperty, NonNegativeAndNonIncreasing) {
  for (const auto& spec : {matern(0.7, 1.3), matern(5.0, 0.4), diffusion(0.8), diffusion(3.0)}) {
    const auto psi = spectral_density(spec);
    double prev = psi(0.0);
    for (double l = 0.05; l < 20.0; l += 0.05) {
      const double v = psi(l);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, prev);
      prev = v;
    }
  }
}

TEST(KernelSpec, Validation) {
  EXPECT_NO_THROW(matern(1.5, 3.0).validate());
  EXPECT_THROW(matern(0.0, 1.0).validate(), InvalidArgument);
  EXPECT_THROW(matern(1.0, -1.0).validate(), InvalidArgument);
  KernelSpec bad = random_walk(0.5, 0);
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = random_walk(1.5, 1);
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = random_walk(0.5, 2);
  bad.laplacian = LaplacianKind::unnormalized;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = inverse_cosine();
  bad.laplacian = LaplacianKind::unnormalized;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  KernelSpec neg = diffusion(1.0);
  neg.sigma2 = 0.0;
  EXPECT_THROW(neg.validate(), InvalidArgument);
}

TEST(KernelSpec, JsonRoundTrip) {
  KernelSpec s = random_walk(0.25, 3);
  s.sigma2 = 2.5;
  s.normalize_variance = true;
  const auto text = to_json(s);
  EXPECT_EQ(kernel_spec_from_json(text), s);
  for (const char* key : {"\"family\"", "\"nu\"", "\"kappa\"", "\"sigma2\"", "\"alpha\"", "\"p\"", "\"laplacian\"",
                          "\"normalize\""})
    EXPECT_NE(text.find(key), std::string::npos) << key;
  const auto partial = kernel_spec_from_json(R"({"family":"diffusion","kappa":2})");
  EXPECT_EQ(partial.family, KernelFamily::diffusion);
  EXPECT_EQ(partial.kappa, 2.0);
  EXPECT_THROW(kernel_spec_from_json("{"), Error);
  EXPECT_THROW(kernel_spec_from_json(R"({"family":"cosine"})"), InvalidArgument);
}

TEST(KernelMatrix, DiffusionSmallKappaIsIdentity) {
  std::mt19937_64 rng(1);
  const auto b = basis_of(testing::random_graph(15, 0.3, rng), LaplacianKind::unnormalized);
  const Eigen::MatrixXd K = kernel_matrix(b, diffusion(1e-8));
  EXPECT_LE((K - Eigen::MatrixXd::Identity(15, 15)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(KernelMatrix, CompleteGraphHasUniformVariance) {
  const auto b = basis_of(testing::complete_graph(4), LaplacianKind::unnormalized);
  for (const auto& spec : {matern(1.5, 3.0), matern(0.5, 0.7), diffusion(1.2)}) {
    const Eigen::VectorXd d = kernel_matrix(b, spec).diagonal();
    EXPECT_LE((d.array() - d[0]).abs().maxCoeff(), 1e-12);
  }
}

TEST(KernelMatrix, MaternMatchesDenseOracle) {
  std::mt19937_64 rng(2);
  const auto g = testing::random_graph(12, 0.3, rng);
  for (bool normalize : {false, true}) {
    KernelSpec spec = matern(2.0, 1.0);
    spec.sigma2 = 1.7;
    spec.normalize_variance = normalize;
    const auto b = basis_of(g, LaplacianKind::unnormalized);
    const Eigen::MatrixXd raw =
        dense_function(dense_laplacian(g, LaplacianKind::unnormalized), [](double l) { return std::pow(4.0 + l, -2.0); });
    const double c = normalize ? 12.0 / raw.trace() : 1.0;
    const Eigen::MatrixXd oracle = 1.7 * c * raw;
    EXPECT_LE((kernel_matrix(b, spec) - oracle).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(KernelMatrix, SubsetsAndBounds) {
  std::mt19937_64 rng(3);
  const auto b = basis_of(testing::random_graph(10, 0.4, rng), LaplacianKind::unnormalized);
  const auto spec = matern(1.5, 2.0);
  const Eigen::MatrixXd K = kernel_matrix(b, spec);
  const std::vector<int> rows{3, 1, 7}, cols{0, 9};
  EXPECT_LE((kernel_matrix(b, spec, rows, cols) - testing::submatrix(K, rows, cols)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((kernel_diagonal(b, spec, rows) - Eigen::Vector3d(K(3, 3), K(1, 1), K(7, 7))).cwiseAbs().maxCoeff(), 1e-14);
  const std::vector<int> bad{10};
  EXPECT_THROW(kernel_matrix(b, spec, bad, cols), InvalidArgument);
  EXPECT_THROW(kernel_matrix(b, matern(1.5, 2.0, LaplacianKind::sym_normalized)), InvalidArgument);
}

TEST(KernelProperty, TraceNormalization) {
  ScopedWarningCapture quiet;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = testing::random_graph(20, 0.2, rng);
    for (KernelSpec spec : {matern(1.5, 3.0), diffusion(2.0), matern(2.5, 1.0, LaplacianKind::sym_normalized),
                            random_walk(0.3, 3), inverse_cosine()}) {
      spec.normalize_variance = true;
      spec.sigma2 = 0.8;
      const Eigen::MatrixXd K = kernel_matrix(basis_of(g, spec.laplacian), spec);
      EXPECT_NEAR(K.trace() / 20.0, 0.8, 1e-10);
    }
  }
}

TEST(KernelProperty, StarCenterHasLowerVariance) {
  const auto b = basis_of(testing::star_graph(4), LaplacianKind::unnormalized);
  for (const auto& spec : {matern(1.5, 3.0), matern(0.5, 1.0), matern(3.0, 5.0)}) {
    const Eigen::VectorXd d = kernel_matrix(b, spec).diagonal();
    for (int leaf = 1; leaf <= 4; ++leaf) EXPECT_LT(d[0], d[leaf]);
  }
}

TEST(KernelProperty, MaternScaledConvergesToDiffusion) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = testing::random_graph(16, 0.3, rng);
    const auto b = basis_of(g, LaplacianKind::unnormalized);
    const double kappa = 0.5, nu = 1e4;
    const Eigen::VectorXd w = rescaled_matern_weights(b.eigenvalues, nu, kappa);
    const Eigen::MatrixXd scaled = b.eigenvectors * w.asDiagonal() * b.eigenvectors.transpose();
    const Eigen::MatrixXd Kd = kernel_matrix(b, diffusion(kappa));
    const double xbar = b.eigenvalues.maxCoeff() * kappa * kappa / 2.0;
    EXPECT_LE((scaled - Kd).cwiseAbs().maxCoeff(), 2.0 * xbar * xbar / (2.0 * nu));
  }
}

TEST(KernelMatrix, RescaledMaternAgreesWithPsi) {
  const Eigen::VectorXd lambda = Eigen::VectorXd::LinSpaced(7, 0.0, 6.0);
  for (double nu : {0.5, 2.0, 5.5}) {
    const double kappa = 1.3, a = 2 * nu / (kappa * kappa);
    const auto psi = spectral_density(matern(nu, kappa));
    const Eigen::VectorXd w = rescaled_matern_weights(lambda, nu, kappa);
    for (int i = 0; i < 7; ++i) EXPECT_NEAR(w[i], std::pow(a, nu) * psi(lambda[i]), 1e-12 * w[i]);
  }
}

TEST(KernelMatrix, NormalizedMaternStableAtLargeNu) {
  std::mt19937_64 rng(55);
  const auto b = basis_of(testing::random_graph(16, 0.3, rng), LaplacianKind::unnormalized);
  KernelSpec m = matern(1e4, 0.5);
  m.normalize_variance = true;
  KernelSpec d = diffusion(0.5);
  d.normalize_variance = true;
  const Eigen::MatrixXd Km = kernel_matrix(b, m);
  ASSERT_TRUE(Km.allFinite());
  EXPECT_LE((Km - kernel_matrix(b, d)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(MaternPrecision, NuOneIsShiftedLaplacian) {
  std::mt19937_64 rng(6);
  const auto g = testing::random_graph(10, 0.3, rng);
  const auto L = build_laplacian(g, LaplacianKind::unnormalized);
  const Eigen::MatrixXd Q(matern_precision_sparse(L, 1, 0.7));
  const Eigen::MatrixXd expected =
      Eigen::MatrixXd(L.matrix) + (2.0 / 0.49) * Eigen::MatrixXd::Identity(10, 10);
  EXPECT_LE((Q - expected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(MaternPrecision, SingleEdgeHandInverse) {
  const WeightedGraph g(2, {{0, 1, 1.0}});
  const auto L = build_laplacian(g, LaplacianKind::unnormalized);
  const Eigen::MatrixXd Q(matern_precision_sparse(L, 1, std::sqrt(2.0)));
  Eigen::Matrix2d expected_q, expected_inv;
  expected_q << 2, -1, -1, 2;
  expected_inv << 2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3;
  EXPECT_LE((Q - Eigen::MatrixXd(expected_q)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((Q.inverse() - Eigen::MatrixXd(expected_inv)).cwiseAbs().maxCoeff(), 1e-14);
  const Eigen::MatrixXd K = kernel_matrix(basis_of(g, LaplacianKind::unnormalized), matern(1.0, std::sqrt(2.0)));
  EXPECT_LE((K - Eigen::MatrixXd(expected_inv)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MaternPrecision, NuTwoSparsityAndInverse) {
  std::mt19937_64 rng(7);
  const auto g = testing::random_graph(20, 0.12, rng);
  const auto L = build_laplacian(g, LaplacianKind::unnormalized);
  const Eigen::MatrixXd Q(matern_precision_sparse(L, 2, 1.3));
  const Eigen::MatrixXd D = dense_laplacian(g, LaplacianKind::unnormalized);
  const Eigen::MatrixXd D2 = D * D;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j)
      if (i != j && Q(i, j) != 0.0) EXPECT_NE(D2(i, j), 0.0) << i << "," << j;
  const Eigen::MatrixXd K = kernel_matrix(basis_of(g, LaplacianKind::unnormalized), matern(2.0, 1.3));
  EXPECT_LE((Q.inverse() - K).cwiseAbs().maxCoeff(), 1e-7 * K.cwiseAbs().maxCoeff());
}

TEST(MaternPrecisionProperty, DualityWithSpectralKernel) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 8 + static_cast<int>(rng() % 57);
    const auto g = testing::random_graph(n, 0.1, rng);
    for (auto kind : {LaplacianKind::unnormalized, LaplacianKind::sym_normalized}) {
      const auto L = build_laplacian(g, kind);
      const auto b = eigendecompose_full(L);
      for (int nu : {1, 2, 3}) {
        const Eigen::MatrixXd Q(matern_precision_sparse(L, nu, 1.5));
        const Eigen::MatrixXd K = kernel_matrix(b, matern(nu, 1.5, kind));
        EXPECT_LE((Q * K - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-6);
      }
    }
  }
}

TEST(MaternPrecision, RejectsUnsupportedNu) {
  const auto L = build_laplacian(testing::path_graph(3), LaplacianKind::unnormalized);
  EXPECT_THROW(matern_precision_sparse(L, 0, 1.0), InvalidArgument);
  EXPECT_THROW(matern_precision_sparse(L, 5, 1.0), InvalidArgument);
  EXPECT_THROW(matern_precision_sparse(L, 2, 0.0), InvalidArgument);
}

TEST(RandomWalk, AlphaOneIsScaledIdentity) {
  std::mt19937_64 rng(9);
  const auto L = build_laplacian(testing::random_graph(8, 0.4, rng), LaplacianKind::sym_normalized);
  EXPECT_LE((random_walk_kernel(L, 1.0, 1, 2.0) - 2.0 * Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((random_walk_kernel(L, 1.0, 1, 2.0, true) - 2.0 * Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(RandomWalk, SingleEdgeIsRankOneConstant) {
  const WeightedGraph g(2, {{0, 1, 1.0}});
  const auto L = build_laplacian(g, LaplacianKind::sym_normalized);
  const Eigen::MatrixXd K = random_walk_kernel(L, 0.5, 2, 1.0);
  // Weights {(1 - 0.5*0)^2, (1 - 0.5*2)^2} = {1, 0}: only the constant mode survives.
  EXPECT_LE((K - Eigen::MatrixXd::Constant(2, 2, 0.5)).cwiseAbs().maxCoeff(), 1e-14);
  const auto w = spectral_weights(basis_of(g, LaplacianKind::sym_normalized), random_walk(0.5, 2));
  EXPECT_NEAR(w[0], 1.0, 1e-14);
  EXPECT_NEAR(w[1], 0.0, 1e-14);
}

TEST(RandomWalk, ConvergesToNormalizedDiffusion) {
  std::mt19937_64 rng(10);
  const auto g = testing::random_graph(16, 0.3, rng);
  const auto L = build_laplacian(g, LaplacianKind::sym_normalized);
  const int p = 100000;
  const double kappa = 1.0;
  const Eigen::MatrixXd Krw = random_walk_kernel(L, 1.0 - kappa * kappa / (2.0 * p), p, 1.0);
  const Eigen::MatrixXd oracle =
      dense_function(dense_laplacian(g, LaplacianKind::sym_normalized), [&](double l) { return std::exp(-kappa * kappa / 2 * l); });
  EXPECT_LE((Krw - oracle).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(RandomWalk, NegativeWeightsClampedWithWarning) {
  const WeightedGraph g(2, {{0, 1, 1.0}});
  const auto L = build_laplacian(g, LaplacianKind::sym_normalized);
  ScopedWarningCapture capture;
  const Eigen::MatrixXd K = random_walk_kernel(L, 0.0, 1, 1.0);  // weight 1 - 2 = -1 on the top mode
  EXPECT_FALSE(capture.messages().empty());
  EXPECT_GE(testing::min_eigenvalue(K), -1e-12);
  EXPECT_THROW(random_walk_kernel(build_laplacian(g, LaplacianKind::unnormalized), 0.5, 1, 1.0), InvalidArgument);
}

TEST(InverseCosine, WeightsAndPsd) {
  const auto edge = basis_of(WeightedGraph(2, {{0, 1, 1.0}}), LaplacianKind::sym_normalized);
  const auto w = spectral_weights(edge, inverse_cosine());
  EXPECT_NEAR(w[0], 1.0, 1e-15);   // lambda = 0
  EXPECT_NEAR(w[1], 0.0, 1e-15);   // lambda = 2
  std::mt19937_64 rng(11);
  const auto b = basis_of(testing::random_graph(10, 0.4, rng), LaplacianKind::sym_normalized);
  const Eigen::MatrixXd K = inverse_cosine_kernel(b, 1.0);
  EXPECT_GE(testing::min_eigenvalue(K), -1e-8 * testing::max_eigenvalue(K));
  const auto un = basis_of(testing::path_graph(3), LaplacianKind::unnormalized);
  EXPECT_THROW(inverse_cosine_kernel(un, 1.0), InvalidArgument);
}

TEST(Separable, ConstantBaseReplicatesGraphKernel) {
  const Eigen::MatrixXd Kg = kernel_matrix(basis_of(testing::path_graph(3), LaplacianKind::unnormalized), matern(1.0, 1.0));
  const BaseKernel one = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return 1.0; };
  const Eigen::MatrixXd pts = Eigen::MatrixXd::Random(2, 1);
  const Eigen::MatrixXd grid = separable_product_kernel_grid(one, Kg, pts);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) EXPECT_LE((grid.block(a * 3, b * 3, 3, 3) - Kg).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Separable, MatchesBruteForceProduct) {
  const Eigen::MatrixXd Kg =
      kernel_matrix(basis_of(WeightedGraph(2, {{0, 1, 1.0}}), LaplacianKind::unnormalized), matern(1.0, 1.0));
  Eigen::MatrixXd pts(3, 1);
  pts << -0.5, 0.1, 1.3;
  const auto se = squared_exponential(0.8, 1.5);
  const Eigen::MatrixXd grid = separable_product_kernel_grid(se, Kg, pts);
  ASSERT_EQ(grid.rows(), 6);
  for (int a = 0; a < 3; ++a)
    for (int i = 0; i < 2; ++i)
      for (int b = 0; b < 3; ++b)
        for (int j = 0; j < 2; ++j) {
          const double d = pts(a, 0) - pts(b, 0);
          const double expected = 1.5 * std::exp(-d * d / (2 * 0.64)) * Kg(i, j);
          EXPECT_NEAR(grid(a * 2 + i, b * 2 + j), expected, 1e-12);
        }
  // Arbitrary pair lists pick the same entries.
  const std::vector<int> pi{2, 0, 2}, nodes{1, 0, 0};
  const Eigen::MatrixXd K = separable_product_kernel(se, Kg, pts, pi, nodes);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(K(r, c), grid(pi[r] * 2 + nodes[r], pi[c] * 2 + nodes[c]), 1e-15);
}

TEST(KernelProperty, AllFamiliesPsdOnRandomGraphs) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 47);
    const auto g = testing::random_graph(n, 0.15, rng);
    const auto bu = basis_of(g, LaplacianKind::unnormalized);
    const auto bn = basis_of(g, LaplacianKind::sym_normalized);
    ScopedWarningCapture quiet;
    for (const auto& spec :
         {matern(1.5, 3.0), diffusion(1.0), matern(0.8, 0.5, LaplacianKind::sym_normalized),
          diffusion(2.0, LaplacianKind::sym_normalized), random_walk(0.2, 4), inverse_cosine()}) {
      const Eigen::MatrixXd K = kernel_matrix(spec.laplacian == LaplacianKind::unnormalized ? bu : bn, spec);
      EXPECT_GE(testing::min_eigenvalue(K), -1e-8 * testing::max_eigenvalue(K)) << to_json(spec);
    }
  }
}

TEST(WeightGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  const auto b = basis_of(testing::random_graph(12, 0.3, rng), LaplacianKind::unnormalized);
  for (bool normalize : {false, true}) {
    for (KernelSpec spec : {matern(1.7, 1.2), diffusion(0.9)}) {
      spec.normalize_variance = normalize;
      spec.sigma2 = 1.3;
      const auto g = scaled_spectral_weight_gradients(b, spec);
      const double h = 1e-6;
      auto fd = [&](auto mutate) {
        KernelSpec hi = spec, lo = spec;
        mutate(hi, h);
        mutate(lo, -h);
        return Eigen::VectorXd((scaled_spectral_weights(b, hi) - scaled_spectral_weights(b, lo)) / (2 * h));
      };
      EXPECT_LE((g.d_kappa - fd([](KernelSpec& s, double d) { s.kappa += d; })).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_LE((g.d_sigma2 - fd([](KernelSpec& s, double d) { s.sigma2 += d; })).cwiseAbs().maxCoeff(), 1e-6);
      if (spec.family == KernelFamily::matern)
        EXPECT_LE((g.d_nu - fd([](KernelSpec& s, double d) { s.nu += d; })).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

}  // namespace
}  // namespace graphgp
