#include "graphgp/classifier.hpp"

#include "graphgp/error.hpp"
#include "graphgp/log.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace graphgp {
namespace {

constexpr double kMinVariance = 1e-12;
constexpr double kInducingJitter = 1e-6;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

Eigen::MatrixXd cholesky_with_jitter(Eigen::MatrixXd K, double base_jitter, const char* what) {
  K = 0.5 * (K + K.transpose()).eval();
  const double scale = std::max(K.diagonal().mean(), 1e-300);
  double jitter = base_jitter;
  for (int attempt = 0; attempt < 6; ++attempt) {
    Eigen::MatrixXd J = K;
    J.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(J);
    if (llt.info() == Eigen::Success) {
      if (attempt > 0) warn(std::string(what) + ": escalated jitter to " + std::to_string(jitter));
      return llt.matrixL();
    }
    jitter = jitter > 0.0 ? jitter * 10.0 : 1e-8 * scale;
  }
  throw NumericalError(std::string(what) + " is not positive definite after jitter escalation");
}

double log_det_from_factor(const Eigen::MatrixXd& L) { return 2.0 * L.diagonal().array().abs().log().sum(); }

// Lower triangle of Lᵀ L̄ with the diagonal halved (Cholesky reverse mode).
Eigen::MatrixXd phi(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out = X.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

// Gradient with respect to a symmetric K = L Lᵀ given the gradient with
// respect to its lower Cholesky factor.
Eigen::MatrixXd cholesky_backward(const Eigen::MatrixXd& L, const Eigen::MatrixXd& Lbar) {
  const Eigen::MatrixXd P = phi(L.transpose() * Eigen::MatrixXd(Lbar.triangularView<Eigen::Lower>()));
  // S = L^-T P L^-1
  Eigen::MatrixXd S = L.transpose().triangularView<Eigen::Upper>().solve(P);
  S = L.transpose().triangularView<Eigen::Upper>().solve(S.transpose()).transpose();
  return 0.5 * (S + S.transpose());
}

}  // namespace

Eigen::VectorXd robustmax(const Eigen::VectorXd& latent, double epsilon) {
  const auto C = latent.size();
  if (C < 2) throw InvalidArgument("robustmax needs at least two classes");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("robustmax epsilon must lie in (0, 1)");
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < C; ++c)
    if (latent[c] > latent[best]) best = c;
  Eigen::VectorXd out = Eigen::VectorXd::Constant(C, epsilon / static_cast<double>(C - 1));
  out[best] = 1.0 - epsilon;
  return out;
}

double kl_gaussian(const Eigen::VectorXd& mu, const Eigen::MatrixXd& S, const Eigen::MatrixXd& K) {
  const auto m = mu.size();
  if (S.rows() != m || S.cols() != m || K.rows() != m || K.cols() != m)
    throw InvalidArgument("kl_gaussian: dimension mismatch");
  const Eigen::MatrixXd Lk = cholesky_with_jitter(K, 0.0, "prior covariance");
  const Eigen::MatrixXd Ls = cholesky_with_jitter(S, 0.0, "variational covariance");
  const auto lower = Lk.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd A = lower.solve(Ls);  // tr(K^-1 S) = |L_K^-1 L_S|_F^2
  const Eigen::VectorXd b = lower.solve(mu);
  const double kl = 0.5 * (A.squaredNorm() + b.squaredNorm() - static_cast<double>(m) + log_det_from_factor(Lk) -
                           log_det_from_factor(Ls));
  return kl;
}

double kl_gaussian_whitened(const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
  return kl_gaussian(mu, S, Eigen::MatrixXd::Identity(mu.size(), mu.size()));
}

VariationalClassifier::VariationalClassifier(std::shared_ptr<const SpectralBasis> basis, KernelSpec spec,
                                             int num_classes, std::vector<int> inducing_nodes,
                                             VariationalCovariance form, bool whitened, double epsilon)
    : basis_(std::move(basis)), spec_(spec), classes_(num_classes), z_(std::move(inducing_nodes)), form_(form),
      whitened_(whitened), epsilon_(epsilon) {
  if (!basis_) throw InvalidArgument("classifier needs a spectral basis");
  if (classes_ < 2) throw InvalidArgument("classifier needs at least two classes");
  if (!(epsilon_ > 0.0 && epsilon_ < 1.0)) throw InvalidArgument("robustmax epsilon must lie in (0, 1)");
  if (z_.empty()) throw InvalidArgument("classifier needs at least one inducing node");
  std::vector<int> sorted = z_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw InvalidArgument("inducing nodes must be distinct");
  spec_.validate();
  check_basis_matches(*basis_, spec_);
  Uz_ = basis_->rows(z_);

  const int m = num_inducing();
  mu_ = Eigen::MatrixXd::Zero(classes_, m);
  if (form_ == VariationalCovariance::diagonal)
    scale_ = Eigen::MatrixXd::Ones(classes_, m);
  else
    scale_full_.assign(classes_, Eigen::MatrixXd::Identity(m, m));
  refactor();
}

void VariationalClassifier::refactor() {
  weights_ = scaled_spectral_weights(*basis_, spec_);
  const Eigen::MatrixXd Kzz = Uz_ * weights_.asDiagonal() * Uz_.transpose();
  Lzz_ = cholesky_with_jitter(Kzz, kInducingJitter, "inducing covariance K_zz");
}

void VariationalClassifier::set_spec(const KernelSpec& spec) {
  spec.validate();
  check_basis_matches(*basis_, spec);
  spec_ = spec;
  refactor();
}

void VariationalClassifier::set_mean(const Eigen::MatrixXd& mu) {
  if (mu.rows() != classes_ || mu.cols() != num_inducing()) throw InvalidArgument("variational mean has wrong shape");
  mu_ = mu;
}

const Eigen::MatrixXd& VariationalClassifier::scale() const {
  if (form_ != VariationalCovariance::diagonal) throw InvalidArgument("scale() is only defined in diagonal form");
  return scale_;
}

void VariationalClassifier::set_scale(const Eigen::MatrixXd& scale) {
  if (form_ != VariationalCovariance::diagonal) throw InvalidArgument("set_scale() is only defined in diagonal form");
  if (scale.rows() != classes_ || scale.cols() != num_inducing()) throw InvalidArgument("scale has wrong shape");
  if ((scale.array() == 0.0).any()) throw InvalidArgument("variational scale entries must be non-zero");
  scale_ = scale;
}

Eigen::MatrixXd VariationalClassifier::scale_factor(int c) const {
  if (c < 0 || c >= classes_) throw InvalidArgument("class index out of range");
  if (form_ == VariationalCovariance::diagonal) return scale_.row(c).transpose().asDiagonal();
  return scale_full_[c];
}

void VariationalClassifier::set_scale_factor(int c, const Eigen::MatrixXd& lower) {
  if (form_ != VariationalCovariance::full) throw InvalidArgument("set_scale_factor() is only defined in full form");
  if (c < 0 || c >= classes_) throw InvalidArgument("class index out of range");
  if (lower.rows() != num_inducing() || lower.cols() != num_inducing()) throw InvalidArgument("scale factor has wrong shape");
  if ((lower.diagonal().array() == 0.0).any()) throw InvalidArgument("scale factor must have a non-zero diagonal");
  scale_full_[c] = lower.triangularView<Eigen::Lower>();
}

Eigen::MatrixXd VariationalClassifier::covariance(int c) const {
  const Eigen::MatrixXd R = scale_factor(c);
  return R * R.transpose();
}

VariationalClassifier VariationalClassifier::reparameterized(bool whitened) const {
  VariationalClassifier out(basis_, spec_, classes_, z_, VariationalCovariance::full, whitened, epsilon_);
  const auto L = Lzz_.triangularView<Eigen::Lower>();
  Eigen::MatrixXd mu = mu_;
  for (int c = 0; c < classes_; ++c) {
    Eigen::MatrixXd R = scale_factor(c);
    if (whitened_ && !whitened) {
      mu.row(c) = (L * mu_.row(c).transpose()).transpose();
      R = L * R;
    } else if (!whitened_ && whitened) {
      mu.row(c) = L.solve(mu_.row(c).transpose()).transpose();
      R = L.solve(R);
    }
    out.set_scale_factor(c, R);
  }
  out.set_mean(mu);
  return out;
}

void VariationalClassifier::check_labels(std::span<const int> nodes, std::span<const int> labels) const {
  if (nodes.size() != labels.size()) throw InvalidArgument("nodes and labels differ in length");
  for (int y : labels)
    if (y < 0 || y >= classes_)
      throw InvalidArgument("label " + std::to_string(y) + " outside [0, " + std::to_string(classes_) + ")");
}

LatentMarginals VariationalClassifier::latent_marginals(std::span<const int> nodes) const {
  const Eigen::MatrixXd Ub = basis_->rows(nodes);
  const Eigen::MatrixXd Kzb = Uz_ * weights_.asDiagonal() * Ub.transpose();
  const Eigen::VectorXd kbb = Ub.array().square().matrix() * weights_;
  const auto L = Lzz_.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd A = L.solve(Kzb);
  const Eigen::MatrixXd P = whitened_ ? A : Eigen::MatrixXd(Lzz_.transpose().triangularView<Eigen::Upper>().solve(A));

  LatentMarginals out;
  out.mean = mu_ * P;
  const Eigen::RowVectorXd base = kbb.transpose() - A.colwise().squaredNorm();
  out.variance.resize(classes_, P.cols());
  for (int c = 0; c < classes_; ++c) {
    Eigen::RowVectorXd extra;
    if (form_ == VariationalCovariance::diagonal)
      extra = scale_.row(c).array().square().matrix() * P.array().square().matrix();
    else
      extra = (scale_full_[c].transpose() * P).colwise().squaredNorm();
    out.variance.row(c) = (base + extra).cwiseMax(kMinVariance);
  }
  return out;
}

double VariationalClassifier::kl() const {
  double total = 0.0;
  const int m = num_inducing();
  Eigen::MatrixXd Kzz;
  if (!whitened_) Kzz = Lzz_ * Lzz_.transpose();
  for (int c = 0; c < classes_; ++c) {
    const Eigen::VectorXd mu = mu_.row(c).transpose();
    if (whitened_ && form_ == VariationalCovariance::diagonal) {
      const Eigen::ArrayXd r2 = scale_.row(c).array().square();
      total += 0.5 * (r2.sum() + mu.squaredNorm() - m - r2.log().sum());
    } else if (whitened_) {
      const Eigen::MatrixXd& R = scale_full_[c];
      total += 0.5 * (R.squaredNorm() + mu.squaredNorm() - m - R.diagonal().array().square().log().sum());
    } else {
      const auto L = Lzz_.triangularView<Eigen::Lower>();
      const Eigen::MatrixXd R = scale_factor(c);
      const Eigen::MatrixXd A = L.solve(R);
      const Eigen::VectorXd b = L.solve(mu);
      total += 0.5 * (A.squaredNorm() + b.squaredNorm() - m + log_det_from_factor(Lzz_) -
                      R.diagonal().array().square().log().sum());
    }
  }
  return total;
}

VariationalClassifier::Gradients VariationalClassifier::elbo_gradients(std::span<const int> batch_nodes,
                                                                       std::span<const int> batch_labels,
                                                                       const Eigen::MatrixXd& noise,
                                                                       int dataset_size,
                                                                       bool hyper_gradients) const {
  check_labels(batch_nodes, batch_labels);
  const auto B = static_cast<Eigen::Index>(batch_nodes.size());
  if (B == 0) throw InvalidArgument("ELBO batch must be non-empty");
  if (noise.rows() != B || noise.cols() < 1) throw InvalidArgument("noise must be |batch| x mc_samples");
  const int N = dataset_size < 0 ? static_cast<int>(B) : dataset_size;
  const double batch_scale = static_cast<double>(N) / static_cast<double>(B);
  const int m = num_inducing();
  const int C = classes_;
  const auto K = noise.cols();

  // Forward pass.
  const Eigen::MatrixXd Ub = basis_->rows(batch_nodes);
  const Eigen::MatrixXd Kzb = Uz_ * weights_.asDiagonal() * Ub.transpose();
  const Eigen::VectorXd kbb = Ub.array().square().matrix() * weights_;
  const auto L = Lzz_.triangularView<Eigen::Lower>();
  const auto Lt = Lzz_.transpose().triangularView<Eigen::Upper>();
  const Eigen::MatrixXd A = L.solve(Kzb);
  const Eigen::MatrixXd P = whitened_ ? A : Eigen::MatrixXd(Lt.solve(A));
  const Eigen::MatrixXd mean = mu_ * P;
  Eigen::MatrixXd var(C, B);
  const Eigen::RowVectorXd base = kbb.transpose() - A.colwise().squaredNorm();
  for (int c = 0; c < C; ++c) {
    if (form_ == VariationalCovariance::diagonal)
      var.row(c) = base + scale_.row(c).array().square().matrix() * P.array().square().matrix();
    else
      var.row(c) = base + (scale_full_[c].transpose() * P).colwise().squaredNorm();
  }
  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped = var.array() < kMinVariance;
  var = var.cwiseMax(kMinVariance);
  const Eigen::MatrixXd sd = var.cwiseSqrt();

  const double log_hit = std::log(1.0 - epsilon_);
  const double log_miss = std::log(epsilon_ / static_cast<double>(C - 1));
  const double gap = log_hit - log_miss;

  Gradients g;
  double loglik = 0.0;
  Eigen::MatrixXd g_mean = Eigen::MatrixXd::Zero(C, B);
  Eigen::MatrixXd g_sd = Eigen::MatrixXd::Zero(C, B);
  std::vector<double> cdf(C), pdf(C), z(C), prefix(C + 1), suffix(C + 1);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = batch_labels[b];
    double hit_prob = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double x = mean(y, b) + sd(y, b) * noise(b, k);
      for (int j = 0; j < C; ++j) {
        if (j == y) {
          cdf[j] = 1.0;
          pdf[j] = 0.0;
          z[j] = 0.0;
          continue;
        }
        z[j] = (x - mean(j, b)) / sd(j, b);
        cdf[j] = normal_cdf(z[j]);
        pdf[j] = normal_pdf(z[j]);
      }
      prefix[0] = 1.0;
      for (int j = 0; j < C; ++j) prefix[j + 1] = prefix[j] * cdf[j];
      suffix[C] = 1.0;
      for (int j = C - 1; j >= 0; --j) suffix[j] = suffix[j + 1] * cdf[j];
      hit_prob += prefix[C];

      // d/dz_j of the product, chained into the latent means and deviations.
      const double g_prob = batch_scale * gap / static_cast<double>(K);
      for (int j = 0; j < C; ++j) {
        if (j == y) continue;
        const double g_z = g_prob * pdf[j] * prefix[j] * suffix[j + 1];
        if (g_z == 0.0) continue;
        const double inv = 1.0 / sd(j, b);
        g_mean(y, b) += g_z * inv;
        g_sd(y, b) += g_z * noise(b, k) * inv;
        g_mean(j, b) -= g_z * inv;
        g_sd(j, b) -= g_z * z[j] * inv;
      }
    }
    loglik += log_miss + gap * hit_prob / static_cast<double>(K);
  }
  g.elbo.expected_log_lik = batch_scale * loglik;
  g.elbo.kl = kl();
  g.elbo.value = g.elbo.expected_log_lik - g.elbo.kl;

  // Backward pass through the marginals.
  Eigen::MatrixXd g_var = g_sd.cwiseQuotient(2.0 * sd);
  g_var = clamped.select(Eigen::MatrixXd::Zero(C, B), g_var);

  g.d_mean = g_mean * P.transpose();
  Eigen::MatrixXd Pbar = mu_.transpose() * g_mean;
  if (form_ == VariationalCovariance::diagonal) {
    const Eigen::MatrixXd r2 = scale_.array().square();
    Pbar += 2.0 * (r2.transpose() * g_var).cwiseProduct(P);
    g.d_scale = 2.0 * scale_.cwiseProduct(g_var * P.array().square().matrix().transpose());
  } else {
    g.d_scale_factor.resize(C);
    for (int c = 0; c < C; ++c) {
      const Eigen::MatrixXd S = scale_full_[c] * scale_full_[c].transpose();
      const Eigen::MatrixXd PG = P * g_var.row(c).transpose().asDiagonal();
      Pbar += 2.0 * S * PG;
      g.d_scale_factor[c] = Eigen::MatrixXd((2.0 * PG * P.transpose() * scale_full_[c]).triangularView<Eigen::Lower>());
    }
  }

  // KL gradients.
  Eigen::MatrixXd Kinv;
  if (!whitened_) Kinv = L.solve(Eigen::MatrixXd::Identity(m, m)).eval(), Kinv = Lt.solve(Kinv).eval();
  Eigen::MatrixXd Kbar_kl = Eigen::MatrixXd::Zero(whitened_ ? 0 : m, whitened_ ? 0 : m);
  for (int c = 0; c < C; ++c) {
    const Eigen::VectorXd mu = mu_.row(c).transpose();
    if (whitened_) {
      g.d_mean.row(c) -= mu.transpose();
      if (form_ == VariationalCovariance::diagonal) {
        g.d_scale.row(c).array() -= scale_.row(c).array() - scale_.row(c).array().inverse();
      } else {
        Eigen::MatrixXd d = scale_full_[c];
        d.diagonal().array() -= scale_full_[c].diagonal().array().inverse();
        g.d_scale_factor[c] -= d;
      }
    } else {
      const Eigen::VectorXd Kmu = Kinv * mu;
      g.d_mean.row(c) -= Kmu.transpose();
      const Eigen::MatrixXd R = scale_factor(c);
      const Eigen::MatrixXd KR = Kinv * R;
      if (form_ == VariationalCovariance::diagonal) {
        g.d_scale.row(c).array() -= Kinv.diagonal().transpose().array() * scale_.row(c).array() -
                                    scale_.row(c).array().inverse();
      } else {
        Eigen::MatrixXd d = KR.triangularView<Eigen::Lower>();
        d.diagonal().array() -= R.diagonal().array().inverse();
        g.d_scale_factor[c] -= d;
      }
      if (hyper_gradients) {
        // d KL_c / dK = 0.5 (K^-1 - K^-1 S K^-1 - K^-1 mu mu^T K^-1)
        Kbar_kl -= 0.5 * (Kinv - KR * KR.transpose() - Kmu * Kmu.transpose());
      }
    }
  }

  if (hyper_gradients) {
    const Eigen::VectorXd kbar = g_var.colwise().sum().transpose();
    Eigen::MatrixXd Abar = -2.0 * A * kbar.asDiagonal();
    Eigen::MatrixXd Lbar = Eigen::MatrixXd::Zero(m, m);
    if (whitened_) {
      Abar += Pbar;
    } else {
      const Eigen::MatrixXd Y = L.solve(Pbar);
      Abar += Y;
      Lbar -= P * Y.transpose();
    }
    const Eigen::MatrixXd Zbar = Lt.solve(Abar);  // gradient w.r.t. K_zb
    Lbar -= Zbar * A.transpose();
    Eigen::MatrixXd Kzz_bar = cholesky_backward(Lzz_, Lbar);
    if (!whitened_) Kzz_bar += Kbar_kl;

    const Eigen::VectorXd dw = Uz_.cwiseProduct(Kzz_bar * Uz_).colwise().sum().transpose() +
                               Uz_.cwiseProduct(Zbar * Ub).colwise().sum().transpose() +
                               Ub.array().square().matrix().transpose() * kbar;
    if (spec_.family == KernelFamily::matern || spec_.family == KernelFamily::diffusion) {
      const WeightGradients wg = scaled_spectral_weight_gradients(*basis_, spec_);
      g.d_kappa = dw.dot(wg.d_kappa);
      g.d_nu = dw.dot(wg.d_nu);
      g.d_sigma2 = dw.dot(wg.d_sigma2);
    } else {
      g.d_sigma2 = dw.dot(weights_) / spec_.sigma2;
    }
  }
  return g;
}

ElboEstimate VariationalClassifier::elbo(std::span<const int> batch_nodes, std::span<const int> batch_labels,
                                         int mc_samples, std::uint64_t seed, int dataset_size) const {
  if (mc_samples < 1) throw InvalidArgument("mc_samples must be at least 1");
  check_labels(batch_nodes, batch_labels);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd noise(static_cast<Eigen::Index>(batch_nodes.size()), mc_samples);
  for (Eigen::Index b = 0; b < noise.rows(); ++b)
    for (int k = 0; k < mc_samples; ++k) noise(b, k) = normal(rng);
  return elbo_gradients(batch_nodes, batch_labels, noise, dataset_size, false).elbo;
}

ClassPrediction VariationalClassifier::predict(std::span<const int> nodes, int mc_samples, std::uint64_t seed) const {
  if (mc_samples < 1) throw InvalidArgument("mc_samples must be at least 1");
  const LatentMarginals q = latent_marginals(nodes);
  const Eigen::MatrixXd sd = q.variance.cwiseSqrt();
  const auto n = static_cast<Eigen::Index>(nodes.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  ClassPrediction out;
  out.probabilities = Eigen::MatrixXd::Zero(n, classes_);
  out.labels.resize(nodes.size());
  const double miss = epsilon_ / static_cast<double>(classes_ - 1);
  Eigen::VectorXi hits(classes_);
  for (Eigen::Index i = 0; i < n; ++i) {
    hits.setZero();
    for (int k = 0; k < mc_samples; ++k) {
      int best = 0;
      double best_value = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < classes_; ++c) {
        const double f = q.mean(c, i) + sd(c, i) * normal(rng);
        if (f > best_value) {
          best_value = f;
          best = c;
        }
      }
      ++hits[best];
    }
    // Average of robustmax vectors: each class gets 1 - eps when it wins, eps/(C-1) otherwise.
    for (int c = 0; c < classes_; ++c) {
      const double frac = static_cast<double>(hits[c]) / mc_samples;
      out.probabilities(i, c) = frac * (1.0 - epsilon_) + (1.0 - frac) * miss;
    }
    Eigen::Index arg = 0;
    for (int c = 1; c < classes_; ++c)
      if (out.probabilities(i, c) > out.probabilities(i, arg)) arg = c;
    out.labels[i] = static_cast<int>(arg);
  }
  return out;
}

namespace {

struct ClassifierPacking {
  bool variational;
  bool kappa = false, nu = false, sigma2 = false;
  int mean_size = 0;
  int scale_size = 0;
  std::vector<std::string> names;
  SoftplusTransform softplus;

  ClassifierPacking(const VariationalClassifier& model, const ClassifierFitConfig& cfg) : variational(cfg.train_variational) {
    const KernelFamily fam = model.spec().family;
    const bool has_kappa = fam == KernelFamily::matern || fam == KernelFamily::diffusion;
    kappa = cfg.train_kappa && has_kappa;
    nu = cfg.train_nu && fam == KernelFamily::matern;
    sigma2 = cfg.train_sigma2;
    const int C = model.num_classes(), m = model.num_inducing();
    if (variational) {
      mean_size = C * m;
      scale_size = model.covariance_form() == VariationalCovariance::diagonal ? C * m : C * m * (m + 1) / 2;
    }
    for (int i = 0; i < mean_size; ++i) names.push_back("q_mu[" + std::to_string(i) + "]");
    for (int i = 0; i < scale_size; ++i) names.push_back("q_sqrt[" + std::to_string(i) + "]");
    if (kappa) names.emplace_back("kappa");
    if (nu) names.emplace_back("nu");
    if (sigma2) names.emplace_back("sigma2");
  }

  bool hyper() const { return kappa || nu || sigma2; }
  int size() const { return static_cast<int>(names.size()); }

  Eigen::VectorXd pack(const VariationalClassifier& model) const {
    Eigen::VectorXd u(size());
    int at = 0;
    const int C = model.num_classes(), m = model.num_inducing();
    if (variational) {
      for (int c = 0; c < C; ++c)
        for (int j = 0; j < m; ++j) u[at++] = model.mean()(c, j);
      for (int c = 0; c < C; ++c) {
        if (model.covariance_form() == VariationalCovariance::diagonal) {
          for (int j = 0; j < m; ++j) u[at++] = model.scale()(c, j);
        } else {
          const Eigen::MatrixXd R = model.scale_factor(c);
          for (int j = 0; j < m; ++j)
            for (int i = j; i < m; ++i) u[at++] = R(i, j);
        }
      }
    }
    if (kappa) u[at++] = softplus.inverse(model.spec().kappa);
    if (nu) u[at++] = softplus.inverse(model.spec().nu);
    if (sigma2) u[at++] = softplus.inverse(model.spec().sigma2);
    return u;
  }

  void unpack(const Eigen::VectorXd& u, VariationalClassifier& model) const {
    int at = 0;
    const int C = model.num_classes(), m = model.num_inducing();
    if (variational) {
      Eigen::MatrixXd mu(C, m);
      for (int c = 0; c < C; ++c)
        for (int j = 0; j < m; ++j) mu(c, j) = u[at++];
      model.set_mean(mu);
      if (model.covariance_form() == VariationalCovariance::diagonal) {
        Eigen::MatrixXd s(C, m);
        for (int c = 0; c < C; ++c)
          for (int j = 0; j < m; ++j) s(c, j) = u[at++];
        model.set_scale(s);
      } else {
        for (int c = 0; c < C; ++c) {
          Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, m);
          for (int j = 0; j < m; ++j)
            for (int i = j; i < m; ++i) R(i, j) = u[at++];
          model.set_scale_factor(c, R);
        }
      }
    }
    if (hyper()) {
      KernelSpec spec = model.spec();
      if (kappa) spec.kappa = softplus.forward(u[at++]);
      if (nu) spec.nu = softplus.forward(u[at++]);
      if (sigma2) spec.sigma2 = softplus.forward(u[at++]);
      model.set_spec(spec);
    }
  }

  // Gradient of the ELBO with respect to the packed vector.
  Eigen::VectorXd gradient(const Eigen::VectorXd& u, const VariationalClassifier& model,
                           const VariationalClassifier::Gradients& g) const {
    Eigen::VectorXd out(size());
    int at = 0;
    const int C = model.num_classes(), m = model.num_inducing();
    if (variational) {
      for (int c = 0; c < C; ++c)
        for (int j = 0; j < m; ++j) out[at++] = g.d_mean(c, j);
      for (int c = 0; c < C; ++c) {
        if (model.covariance_form() == VariationalCovariance::diagonal) {
          for (int j = 0; j < m; ++j) out[at++] = g.d_scale(c, j);
        } else {
          for (int j = 0; j < m; ++j)
            for (int i = j; i < m; ++i) out[at++] = g.d_scale_factor[c](i, j);
        }
      }
    }
    if (kappa) { out[at] = g.d_kappa * softplus.derivative(u[at]); ++at; }
    if (nu) { out[at] = g.d_nu * softplus.derivative(u[at]); ++at; }
    if (sigma2) { out[at] = g.d_sigma2 * softplus.derivative(u[at]); ++at; }
    return out;
  }
};

}  // namespace

ClassifierFitResult fit_classifier(VariationalClassifier& model, std::span<const int> nodes,
                                   std::span<const int> labels, const ClassifierFitConfig& config,
                                   std::uint64_t seed) {
  if (nodes.size() != labels.size()) throw InvalidArgument("nodes and labels differ in length");
  if (nodes.empty()) throw InvalidArgument("no training data");
  if (config.mc_samples < 1) throw InvalidArgument("mc_samples must be at least 1");
  const ClassifierPacking packing(model, config);
  ClassifierFitResult result;
  if (packing.size() == 0) return result;

  Eigen::VectorXd u = packing.pack(model);
  AdamState adam(u.size(), config.adam);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const auto N = static_cast<int>(nodes.size());
  const int batch = config.batch_size > 0 ? std::min(config.batch_size, N) : N;
  std::vector<int> batch_nodes(batch), batch_labels(batch);
  std::vector<int> order(N);
  for (int i = 0; i < N; ++i) order[i] = i;

  auto snapshot = [&]() {
    std::ostringstream s;
    s << "{\"kernel\":" << to_json(model.spec()) << "}";
    return s.str();
  };

  for (int it = 0; it < config.adam.iterations; ++it) {
    if (batch < N) {
      for (int i = 0; i < batch; ++i) {
        const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(N - i));
        std::swap(order[i], order[j]);
      }
    }
    for (int i = 0; i < batch; ++i) {
      batch_nodes[i] = nodes[order[i]];
      batch_labels[i] = labels[order[i]];
    }
    Eigen::MatrixXd noise(batch, config.mc_samples);
    for (int b = 0; b < batch; ++b)
      for (int k = 0; k < config.mc_samples; ++k) noise(b, k) = normal(rng);

    const auto g = model.elbo_gradients(batch_nodes, batch_labels, noise, N, packing.hyper());
    if (!std::isfinite(g.elbo.value))
      throw ClassifierFitError("non-finite ELBO at iteration " + std::to_string(it), snapshot(), it);
    result.elbo_trace.push_back(g.elbo.value);
    const Eigen::VectorXd grad = -packing.gradient(u, model, g);
    try {
      adam.step(u, grad, packing.names);
      packing.unpack(u, model);
    } catch (const NumericalError& e) {
      throw ClassifierFitError(e.what(), snapshot(), it);
    } catch (const InvalidArgument& e) {
      throw ClassifierFitError(e.what(), snapshot(), it);
    }
  }
  return result;
}

}  // namespace graphgp
