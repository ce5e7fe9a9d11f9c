#include "graphgp/regression.hpp"

#include "graphgp/error.hpp"
#include "graphgp/log.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <limits>
#include <sstream>

namespace graphgp {
namespace {

WeightGradients weights_and_gradients(const SpectralBasis& basis, const KernelSpec& spec) {
  if (spec.family == KernelFamily::matern || spec.family == KernelFamily::diffusion)
    return scaled_spectral_weight_gradients(basis, spec);
  WeightGradients g;
  g.weights = scaled_spectral_weights(basis, spec);
  g.d_sigma2 = g.weights / spec.sigma2;
  g.d_kappa = Eigen::VectorXd::Zero(g.weights.size());
  g.d_nu = Eigen::VectorXd::Zero(g.weights.size());
  return g;
}

// Cholesky with the escalating-jitter policy: 1e-8 * mean(diag), times 10
// per retry, up to 1e-4 * mean(diag).
double factor_with_jitter(const Eigen::MatrixXd& A, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(A);
  if (llt.info() == Eigen::Success) return 0.0;
  const double scale = A.diagonal().mean();
  for (double rel = 1e-8; rel <= 1e-4 * (1 + 1e-12); rel *= 10.0) {
    Eigen::MatrixXd jittered = A;
    jittered.diagonal().array() += rel * scale;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) {
      std::ostringstream msg;
      msg << "added jitter " << rel * scale << " to factor the kernel matrix";
      warn(msg.str());
      return rel * scale;
    }
  }
  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A, Eigen::EigenvaluesOnly).eigenvalues()[0];
  std::ostringstream msg;
  msg << "matrix is not positive definite after jitter escalation (min eigenvalue " << min_eig << ")";
  throw NumericalError(msg.str());
}

}  // namespace

GPRegressionModel::GPRegressionModel(std::shared_ptr<const SpectralBasis> basis, KernelSpec spec,
                                     double noise_variance, std::vector<int> train_nodes,
                                     Eigen::VectorXd targets)
    : basis_(std::move(basis)), spec_(spec), noise_(noise_variance), x_(std::move(train_nodes)),
      y_(std::move(targets)) {
  if (!basis_) throw InvalidArgument("regression model needs a spectral basis");
  if (static_cast<Eigen::Index>(x_.size()) != y_.size())
    throw InvalidArgument("number of training nodes and targets differ");
  if (!(noise_ > 0.0)) throw InvalidArgument("noise variance must be positive");
  spec_.validate();
  check_basis_matches(*basis_, spec_);
  Ux_ = basis_->rows(x_);
  refactor();
}

void GPRegressionModel::set_hyperparameters(const KernelSpec& spec, double noise_variance) {
  if (!(noise_variance > 0.0)) throw InvalidArgument("noise variance must be positive");
  spec.validate();
  check_basis_matches(*basis_, spec);
  spec_ = spec;
  noise_ = noise_variance;
  refactor();
}

void GPRegressionModel::refactor() {
  weights_ = scaled_spectral_weights(*basis_, spec_);
  if (x_.empty()) {
    alpha_.resize(0);
    jitter_ = 0.0;
    return;
  }
  Eigen::MatrixXd A = Ux_ * weights_.asDiagonal() * Ux_.transpose();
  A = 0.5 * (A + A.transpose());
  A.diagonal().array() += noise_;
  jitter_ = factor_with_jitter(A, chol_);
  const Eigen::VectorXd d = Eigen::MatrixXd(chol_.matrixL()).diagonal();
  const double ratio = d.maxCoeff() / d.minCoeff();
  if (ratio * ratio > 1e12) {
    std::ostringstream msg;
    msg << "K_xx + noise I is ill-conditioned (condition estimate " << ratio * ratio << ")";
    warn(msg.str());
  }
  alpha_ = chol_.solve(y_);
}

Eigen::MatrixXd GPRegressionModel::cross_kernel(std::span<const int> query) const {
  return basis_->rows(query) * weights_.asDiagonal() * Ux_.transpose();
}

PosteriorSummary GPRegressionModel::posterior(std::span<const int> query, CovarianceMode mode) const {
  const Eigen::MatrixXd Uq = basis_->rows(query);
  PosteriorSummary out;
  const auto q = static_cast<Eigen::Index>(query.size());
  if (x_.empty()) {
    out.mean = Eigen::VectorXd::Zero(q);
    out.variance = Uq.array().square().matrix() * weights_;
    if (mode == CovarianceMode::full) out.covariance = Uq * weights_.asDiagonal() * Uq.transpose();
    return out;
  }
  const Eigen::MatrixXd Kqx = Uq * weights_.asDiagonal() * Ux_.transpose();
  out.mean = Kqx * alpha_;
  // V = L^-1 K_xq, so K_qx A^-1 K_xq = V^T V.
  const Eigen::MatrixXd V = chol_.matrixL().solve(Kqx.transpose());
  const Eigen::VectorXd prior_var = Uq.array().square().matrix() * weights_;
  out.variance = prior_var - V.colwise().squaredNorm().transpose();
  if (mode == CovarianceMode::full) {
    Eigen::MatrixXd cov = Uq * weights_.asDiagonal() * Uq.transpose() - V.transpose() * V;
    out.covariance = 0.5 * (cov + cov.transpose());
  }
  return out;
}

PosteriorSummary GPRegressionModel::woodbury_posterior(std::span<const int> query, CovarianceMode mode) const {
  // Weights at eigensolver round-off level relative to the largest cannot be inverted meaningfully.
  const double cutoff = weights_.size() ? 16.0 * static_cast<double>(weights_.size()) *
                                              std::numeric_limits<double>::epsilon() * weights_.maxCoeff()
                                        : 0.0;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index s = 0; s < weights_.size(); ++s)
    if (weights_[s] > cutoff) kept.push_back(s);
  if (static_cast<Eigen::Index>(kept.size()) < weights_.size()) {
    warn("woodbury posterior: dropped " + std::to_string(weights_.size() - kept.size()) +
         " mode(s) with zero prior weight");
  }
  const auto r = static_cast<Eigen::Index>(kept.size());
  const Eigen::MatrixXd UqAll = basis_->rows(query);
  Eigen::MatrixXd Uq(UqAll.rows(), r), Ux(Ux_.rows(), r);
  Eigen::VectorXd w(r);
  for (Eigen::Index k = 0; k < r; ++k) {
    Uq.col(k) = UqAll.col(kept[k]);
    Ux.col(k) = Ux_.col(kept[k]);
    w[k] = weights_[kept[k]];
  }

  const double inv_s = 1.0 / noise_;
  // Inner matrix Psi^-1 + U_x^T U_x / s (r x r).
  Eigen::MatrixXd inner = inv_s * Ux.transpose() * Ux;
  inner.diagonal() += w.cwiseInverse();
  const Eigen::LLT<Eigen::MatrixXd> inner_chol(inner);
  if (inner_chol.info() != Eigen::Success) throw NumericalError("Woodbury inner matrix is not positive definite");

  // (K + s I)^-1 B applied without forming the |x| x |x| inverse.
  auto apply_inverse = [&](const Eigen::MatrixXd& B) -> Eigen::MatrixXd {
    return inv_s * B - inv_s * inv_s * Ux * inner_chol.solve(Ux.transpose() * B);
  };

  PosteriorSummary out;
  const Eigen::MatrixXd Kxq = Ux * w.asDiagonal() * Uq.transpose();
  const Eigen::MatrixXd solved = apply_inverse(Kxq);  // A^-1 K_xq
  out.mean = solved.transpose() * y_;
  const Eigen::VectorXd prior_var = Uq.array().square().matrix() * w;
  out.variance = prior_var - Kxq.cwiseProduct(solved).colwise().sum().transpose();
  if (mode == CovarianceMode::full) {
    Eigen::MatrixXd cov = Uq * w.asDiagonal() * Uq.transpose() - Kxq.transpose() * solved;
    out.covariance = 0.5 * (cov + cov.transpose());
  }
  return out;
}

LogMarginalLikelihood GPRegressionModel::log_marginal_likelihood() const {
  LogMarginalLikelihood out;
  const auto n = static_cast<double>(x_.size());
  if (x_.empty()) return out;
  const Eigen::MatrixXd L = chol_.matrixL();
  out.value = -0.5 * y_.dot(alpha_) - L.diagonal().array().log().sum() - 0.5 * n * std::log(2.0 * std::numbers::pi);

  const WeightGradients g = weights_and_gradients(*basis_, spec_);
  // d value / d w_s = 0.5 * ((u_s^T alpha)^2 - u_s^T A^-1 u_s)
  const Eigen::VectorXd proj = Ux_.transpose() * alpha_;
  const Eigen::MatrixXd solved = chol_.solve(Ux_);
  const Eigen::VectorXd quad = Ux_.cwiseProduct(solved).colwise().sum().transpose();
  const Eigen::VectorXd dw = 0.5 * (proj.array().square() - quad.array()).matrix();

  out.gradient[static_cast<int>(Hyper::kappa)] = dw.dot(g.d_kappa);
  out.gradient[static_cast<int>(Hyper::nu)] = dw.dot(g.d_nu);
  out.gradient[static_cast<int>(Hyper::sigma2)] = dw.dot(g.d_sigma2);
  const Eigen::MatrixXd Ainv = chol_.solve(Eigen::MatrixXd::Identity(x_.size(), x_.size()));
  out.gradient[static_cast<int>(Hyper::noise)] = 0.5 * (alpha_.squaredNorm() - Ainv.trace());
  return out;
}

Eigen::MatrixXd GPRegressionModel::pathwise_sample(std::span<const int> query, std::uint64_t seed,
                                                   int n_samples) const {
  if (n_samples < 0) throw InvalidArgument("sample count must be non-negative");
  const Eigen::MatrixXd Uq = basis_->rows(query);
  const Eigen::VectorXd root_w = weights_.cwiseSqrt();
  const Eigen::Index m = weights_.size();
  const auto nx = static_cast<Eigen::Index>(x_.size());
  const double noise_sd = std::sqrt(noise_);
  const Eigen::MatrixXd Kqx = nx > 0 ? cross_kernel(query) : Eigen::MatrixXd(Uq.rows(), 0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(Uq.rows(), n_samples);
  constexpr int kChunk = 4096;
  for (int start = 0; start < n_samples; start += kChunk) {
    const int count = std::min(kChunk, n_samples - start);
    Eigen::MatrixXd xi(m, count);
    for (int j = 0; j < count; ++j)
      for (Eigen::Index s = 0; s < m; ++s) xi(s, j) = normal(rng);
    Eigen::MatrixXd eps(nx, count);
    for (int j = 0; j < count; ++j)
      for (Eigen::Index i = 0; i < nx; ++i) eps(i, j) = noise_sd * normal(rng);

    const Eigen::MatrixXd coeffs = root_w.asDiagonal() * xi;
    Eigen::MatrixXd block = Uq * coeffs;
    if (nx > 0) {
      Eigen::MatrixXd residual = (-(Ux_ * coeffs) - eps).colwise() + y_;
      block += Kqx * chol_.solve(residual);
    }
    out.middleCols(start, count) = block;
  }
  return out;
}

RegressionParameterization::RegressionParameterization(const KernelSpec& spec, Trainable trainable,
                                                       double noise_floor) {
  const bool has_kappa = spec.family == KernelFamily::matern || spec.family == KernelFamily::diffusion;
  const bool has_nu = spec.family == KernelFamily::matern;
  if (trainable.kappa && has_kappa) active_.push_back(Hyper::kappa);
  if (trainable.nu && has_nu) active_.push_back(Hyper::nu);
  if (trainable.sigma2) active_.push_back(Hyper::sigma2);
  if (trainable.noise) active_.push_back(Hyper::noise);
  for (Hyper h : active_) names_.emplace_back(kHyperNames[static_cast<int>(h)]);
  transforms_[static_cast<int>(Hyper::noise)].lower = noise_floor;
}

Eigen::VectorXd RegressionParameterization::pack(const KernelSpec& spec, double noise) const {
  Eigen::VectorXd u(size());
  for (int i = 0; i < size(); ++i) {
    const Hyper h = active_[i];
    const double x = h == Hyper::kappa ? spec.kappa : h == Hyper::nu ? spec.nu : h == Hyper::sigma2 ? spec.sigma2 : noise;
    u[i] = transforms_[static_cast<int>(h)].inverse(x);
  }
  return u;
}

void RegressionParameterization::unpack(const Eigen::VectorXd& u, KernelSpec& spec, double& noise) const {
  for (int i = 0; i < size(); ++i) {
    const Hyper h = active_[i];
    const double x = transforms_[static_cast<int>(h)].forward(u[i]);
    switch (h) {
      case Hyper::kappa: spec.kappa = x; break;
      case Hyper::nu: spec.nu = x; break;
      case Hyper::sigma2: spec.sigma2 = x; break;
      case Hyper::noise: noise = x; break;
    }
  }
}

Eigen::VectorXd RegressionParameterization::pull_back(const Eigen::VectorXd& u,
                                                      const std::array<double, kHyperCount>& natural) const {
  Eigen::VectorXd g(size());
  for (int i = 0; i < size(); ++i) {
    const auto h = static_cast<int>(active_[i]);
    g[i] = natural[h] * transforms_[h].derivative(u[i]);
  }
  return g;
}

RegressionFitResult fit(GPRegressionModel& model, const AdamConfig& config,
                        RegressionParameterization::Trainable trainable) {
  RegressionFitResult result;
  const RegressionParameterization param(model.spec(), trainable);
  Eigen::VectorXd u = param.pack(model.spec(), model.noise_variance());
  AdamState adam(u.size(), config);

  KernelSpec best_spec = model.spec();
  double best_noise = model.noise_variance();
  double best_loss = std::numeric_limits<double>::infinity();

  auto snapshot = [&]() {
    std::ostringstream s;
    s.precision(17);
    s << "{\"kernel\":" << to_json(model.spec()) << ",\"noise_variance\":" << model.noise_variance() << "}";
    return s.str();
  };

  for (int it = 0; it <= config.iterations; ++it) {
    const LogMarginalLikelihood lml = model.log_marginal_likelihood();
    const double loss = -lml.value;
    if (!std::isfinite(loss)) throw FitError("non-finite loss at iteration " + std::to_string(it), snapshot(), it);
    result.loss_trace.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_spec = model.spec();
      best_noise = model.noise_variance();
      result.best_iteration = it;
    }
    result.best_loss_trace.push_back(best_loss);
    if (it == config.iterations || param.size() == 0) break;

    std::array<double, kHyperCount> neg{};
    for (int k = 0; k < kHyperCount; ++k) neg[k] = -lml.gradient[k];
    const Eigen::VectorXd grad = param.pull_back(u, neg);
    try {
      adam.step(u, grad, param.names());
    } catch (const NumericalError& e) {
      throw FitError(e.what(), snapshot(), it);
    }
    KernelSpec spec = model.spec();
    double noise = model.noise_variance();
    param.unpack(u, spec, noise);
    try {
      model.set_hyperparameters(spec, noise);
    } catch (const NumericalError& e) {
      throw FitError(e.what(), snapshot(), it);
    }
  }
  if (best_spec != model.spec() || best_noise != model.noise_variance())
    model.set_hyperparameters(best_spec, best_noise);
  return result;
}

}  // namespace graphgp
