#pragma once

#include "graphgp/error.hpp"
#include "graphgp/kernels.hpp"
#include "graphgp/spectral.hpp"
#include "graphgp/training.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace graphgp {

enum class CovarianceMode { full, diagonal };

/// Posterior moments over a list of query nodes. `variance` is always set;
/// `covariance` only in CovarianceMode::full.
struct PosteriorSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::MatrixXd covariance;
};

/// Hyperparameters in a fixed order, used for gradients and the optimizer.
enum class Hyper : int { kappa = 0, nu = 1, sigma2 = 2, noise = 3 };
inline constexpr int kHyperCount = 4;
inline constexpr std::array<const char*, kHyperCount> kHyperNames = {"kappa", "nu", "sigma2", "noise_variance"};

struct LogMarginalLikelihood {
  double value = 0.0;
  /// d value / d (kappa, nu, sigma2, noise variance) in natural coordinates.
  std::array<double, kHyperCount> gradient{};
};

/// Exact GP regression on graph nodes, y = f(x) + eps, eps ~ N(0, noise).
///
/// The kernel is evaluated through a (possibly truncated) spectral basis. The
/// Cholesky factor of K_xx + noise I is recomputed eagerly whenever a
/// hyperparameter changes, so const members are safe to call concurrently.
class GPRegressionModel {
 public:
  GPRegressionModel(std::shared_ptr<const SpectralBasis> basis, KernelSpec spec, double noise_variance,
                    std::vector<int> train_nodes, Eigen::VectorXd targets);

  const KernelSpec& spec() const { return spec_; }
  double noise_variance() const { return noise_; }
  const std::vector<int>& train_nodes() const { return x_; }
  const Eigen::VectorXd& targets() const { return y_; }
  const SpectralBasis& basis() const { return *basis_; }
  std::shared_ptr<const SpectralBasis> shared_basis() const { return basis_; }
  /// Diagonal jitter that was needed to factor K_xx + noise I (0 if none).
  double jitter() const { return jitter_; }

  void set_hyperparameters(const KernelSpec& spec, double noise_variance);

  /// Dense conditional-Gaussian posterior via the Cholesky factor.
  PosteriorSummary posterior(std::span<const int> query, CovarianceMode mode = CovarianceMode::full) const;

  /// Same posterior through the Woodbury identity on the spectral features:
  /// (K + s I)^-1 = I/s - U (Psi^-1 + U^T U / s)^-1 U^T / s^2.
  /// Modes with zero prior weight are dropped with a warning.
  PosteriorSummary woodbury_posterior(std::span<const int> query,
                                      CovarianceMode mode = CovarianceMode::full) const;

  /// log N(y | 0, K_xx + noise I) and its gradient. Kernel gradients are
  /// available for matern and diffusion (kappa, nu) and every family (sigma2).
  LogMarginalLikelihood log_marginal_likelihood() const;

  /// Posterior samples by pathwise conditioning of joint prior draws:
  /// f_q + K_qx (K_xx + noise I)^-1 (y - f_x - eps). Returns |query| x n_samples.
  Eigen::MatrixXd pathwise_sample(std::span<const int> query, std::uint64_t seed, int n_samples) const;

 private:
  void refactor();
  Eigen::MatrixXd cross_kernel(std::span<const int> query) const;  // K_qx

  std::shared_ptr<const SpectralBasis> basis_;
  KernelSpec spec_;
  double noise_;
  std::vector<int> x_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd Ux_;        // rows of U at the training nodes
  Eigen::VectorXd weights_;   // sigma2 * c * Psi(lambda)
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;     // (K_xx + noise I)^-1 y
  double jitter_ = 0.0;
};

/// Maps the trainable hyperparameters to an unconstrained vector through
/// softplus transforms (noise variance bounded below by `noise_floor`).
class RegressionParameterization {
 public:
  struct Trainable {
    bool kappa = true;
    bool nu = true;
    bool sigma2 = true;
    bool noise = true;
  };

  RegressionParameterization(const KernelSpec& spec, Trainable trainable, double noise_floor = 1e-6);

  int size() const { return static_cast<int>(active_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  Eigen::VectorXd pack(const KernelSpec& spec, double noise) const;
  void unpack(const Eigen::VectorXd& u, KernelSpec& spec, double& noise) const;
  /// Chain rule from natural-coordinate gradients to the unconstrained vector.
  Eigen::VectorXd pull_back(const Eigen::VectorXd& u, const std::array<double, kHyperCount>& natural) const;

 private:
  std::vector<Hyper> active_;
  std::vector<std::string> names_;
  std::array<SoftplusTransform, kHyperCount> transforms_;
};

struct RegressionFitResult {
  std::vector<double> loss_trace;       // negative log marginal likelihood per iterate
  std::vector<double> best_loss_trace;  // running minimum of loss_trace
  int best_iteration = 0;
};

/// Raised when the loss becomes non-finite. Carries the last parameters.
class FitError : public NumericalError {
 public:
  FitError(const std::string& what, std::string snapshot_json, int iteration)
      : NumericalError(what), snapshot_(std::move(snapshot_json)), iteration_(iteration) {}
  const std::string& snapshot() const { return snapshot_; }
  int iteration() const { return iteration_; }

 private:
  std::string snapshot_;
  int iteration_;
};

/// Maximizes the log marginal likelihood with ADAM in unconstrained
/// coordinates. The model is left at the best iterate seen.
RegressionFitResult fit(GPRegressionModel& model, const AdamConfig& config,
                        RegressionParameterization::Trainable trainable = {});

/// Posterior of a GMRF prior N(0, Q^-1) observed with Gaussian noise, by a
/// sparse Cholesky factorization of Q + P^T P / noise.
PosteriorSummary gmrf_posterior(const SparseMatrix& precision, double noise_variance,
                                std::span<const int> train_nodes, const Eigen::VectorXd& targets,
                                std::span<const int> query, CovarianceMode mode = CovarianceMode::full);

}  // namespace graphgp
