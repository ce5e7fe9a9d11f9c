#pragma once

#include "graphgp/error.hpp"
#include "graphgp/kernels.hpp"
#include "graphgp/spectral.hpp"
#include "graphgp/training.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace graphgp {

/// Robust max link: 1 - eps on the argmax class (lowest index wins ties),
/// eps / (C - 1) elsewhere.
Eigen::VectorXd robustmax(const Eigen::VectorXd& latent, double epsilon);

/// KL(N(mu, S) || N(0, K)). K and S are factored with escalating jitter;
/// throws NumericalError if either stays indefinite.
double kl_gaussian(const Eigen::VectorXd& mu, const Eigen::MatrixXd& S, const Eigen::MatrixXd& K);
/// KL(N(mu, S) || N(0, I)).
double kl_gaussian_whitened(const Eigen::VectorXd& mu, const Eigen::MatrixXd& S);

enum class VariationalCovariance { diagonal, full };

/// Marginals of q(f) at a set of nodes, one row per class.
struct LatentMarginals {
  Eigen::MatrixXd mean;      // C x |nodes|
  Eigen::MatrixXd variance;  // C x |nodes|
};

struct ElboEstimate {
  double value = 0.0;             // scaled expected log-likelihood minus KL
  double expected_log_lik = 0.0;  // already multiplied by N / |batch|
  double kl = 0.0;
};

struct ClassPrediction {
  Eigen::MatrixXd probabilities;  // |nodes| x C
  std::vector<int> labels;
};

/// Multi-class sparse variational GP with C independent graph GP latents
/// sharing one kernel, inducing variables u_c = f_c(z), and a robust-max
/// categorical likelihood.
///
/// Variational parameters: means (C x m) and square roots R_c of the
/// covariances S_c = R_c R_c^T. In diagonal form `scale()` holds the
/// diagonal of each R_c (C x m); in full form `scale_factor(c)` is the lower
/// triangular R_c. With whitening, u_c = L v_c (K_zz = L L^T) and q acts on v_c.
class VariationalClassifier {
 public:
  VariationalClassifier(std::shared_ptr<const SpectralBasis> basis, KernelSpec spec, int num_classes,
                        std::vector<int> inducing_nodes,
                        VariationalCovariance form = VariationalCovariance::diagonal, bool whitened = true,
                        double epsilon = 1e-3);

  int num_classes() const { return classes_; }
  int num_inducing() const { return static_cast<int>(z_.size()); }
  const std::vector<int>& inducing_nodes() const { return z_; }
  const KernelSpec& spec() const { return spec_; }
  double epsilon() const { return epsilon_; }
  bool whitened() const { return whitened_; }
  VariationalCovariance covariance_form() const { return form_; }
  const SpectralBasis& basis() const { return *basis_; }
  std::shared_ptr<const SpectralBasis> shared_basis() const { return basis_; }

  const Eigen::MatrixXd& mean() const { return mu_; }
  void set_mean(const Eigen::MatrixXd& mu);
  /// Diagonal form only.
  const Eigen::MatrixXd& scale() const;
  void set_scale(const Eigen::MatrixXd& scale);
  /// Lower-triangular R_c; in diagonal form the diagonal matrix is built on the fly.
  Eigen::MatrixXd scale_factor(int c) const;
  /// Full form only.
  void set_scale_factor(int c, const Eigen::MatrixXd& lower);
  /// S_c = R_c R_c^T.
  Eigen::MatrixXd covariance(int c) const;

  void set_spec(const KernelSpec& spec);

  /// Cholesky factor of K_zz (including jitter).
  const Eigen::MatrixXd& prior_factor() const { return Lzz_; }

  /// Same predictive distribution expressed in the other parameterization
  /// (always full covariance form).
  VariationalClassifier reparameterized(bool whitened) const;

  LatentMarginals latent_marginals(std::span<const int> nodes) const;
  double kl() const;

  /// Doubly stochastic ELBO estimate: the batch log-likelihood is rescaled by
  /// dataset_size / |batch|. Each expectation E log p(y | f) is estimated
  /// with `mc_samples` draws of the labelled latent, the other classes being
  /// integrated exactly (conditional Monte Carlo).
  ElboEstimate elbo(std::span<const int> batch_nodes, std::span<const int> batch_labels, int mc_samples,
                    std::uint64_t seed, int dataset_size = -1) const;

  /// Class probabilities as the Monte-Carlo average of robustmax over
  /// samples of the latent marginals.
  ClassPrediction predict(std::span<const int> nodes, int mc_samples, std::uint64_t seed) const;

  /// Objective and gradients for one optimization step; see fit_classifier.
  struct Gradients {
    ElboEstimate elbo;
    Eigen::MatrixXd d_mean;                // C x m
    Eigen::MatrixXd d_scale;               // diagonal form: C x m
    std::vector<Eigen::MatrixXd> d_scale_factor;  // full form: lower-triangular m x m per class
    double d_kappa = 0.0;
    double d_nu = 0.0;
    double d_sigma2 = 0.0;
  };
  /// ELBO estimate with standard-normal draws `noise` (|batch| x mc_samples)
  /// and its exact gradient with respect to every parameter.
  Gradients elbo_gradients(std::span<const int> batch_nodes, std::span<const int> batch_labels,
                           const Eigen::MatrixXd& noise, int dataset_size, bool hyper_gradients) const;

 private:
  void refactor();
  void check_labels(std::span<const int> nodes, std::span<const int> labels) const;

  std::shared_ptr<const SpectralBasis> basis_;
  KernelSpec spec_;
  int classes_;
  std::vector<int> z_;
  VariationalCovariance form_;
  bool whitened_;
  double epsilon_;

  Eigen::MatrixXd mu_;
  Eigen::MatrixXd scale_;                   // diagonal form
  std::vector<Eigen::MatrixXd> scale_full_;  // full form
  Eigen::MatrixXd Uz_;
  Eigen::VectorXd weights_;
  Eigen::MatrixXd Lzz_;
};

struct ClassifierFitConfig {
  AdamConfig adam;
  int mc_samples = 20;
  int batch_size = 0;  // 0: full batch
  bool train_kappa = true;
  bool train_nu = true;
  bool train_sigma2 = true;
  bool train_variational = true;
};

struct ClassifierFitResult {
  std::vector<double> elbo_trace;
};

/// Raised on a non-finite ELBO; carries a JSON snapshot of the kernel.
class ClassifierFitError : public NumericalError {
 public:
  ClassifierFitError(const std::string& what, std::string snapshot, int iteration)
      : NumericalError(what), snapshot_(std::move(snapshot)), iteration_(iteration) {}
  const std::string& snapshot() const { return snapshot_; }
  int iteration() const { return iteration_; }

 private:
  std::string snapshot_;
  int iteration_;
};

/// Maximizes the ELBO with ADAM. Deterministic for a fixed seed.
ClassifierFitResult fit_classifier(VariationalClassifier& model, std::span<const int> nodes,
                                   std::span<const int> labels, const ClassifierFitConfig& config,
                                   std::uint64_t seed);

}  // namespace graphgp
