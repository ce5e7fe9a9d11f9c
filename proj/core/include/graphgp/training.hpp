#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace graphgp {

struct AdamConfig {
  int iterations = 20000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected ADAM (Kingma & Ba).
class AdamState {
 public:
  AdamState() = default;
  AdamState(Eigen::Index size, const AdamConfig& config);

  /// In-place update of `params`. Throws NumericalError naming the first
  /// non-finite gradient entry (using `names` when provided).
  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
            std::span<const std::string> names = {});

  long step_count() const { return step_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long step_ = 0;
};

/// Smooth bijection from R onto (lower, inf): x = lower + log(1 + e^u).
struct SoftplusTransform {
  double lower = 0.0;

  double forward(double u) const;
  double inverse(double x) const;
  /// dx/du at u.
  double derivative(double u) const;
};

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

/// Random disjoint split of `population`. With `n_test < 0` every node not
/// drawn for training goes to the test set; otherwise the test set holds
/// `n_test` further random draws.
Split random_split(std::span<const int> population, int n_train, std::uint64_t seed, int n_test = -1);

double mean_squared_error(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truth);
double accuracy(std::span<const int> predictions, std::span<const int> truth);

/// Affine transform to zero mean and unit (population) standard deviation
/// over the training values.
class Standardizer {
 public:
  static Standardizer fit(const Eigen::VectorXd& y_train);

  Eigen::VectorXd transform(const Eigen::VectorXd& y) const;
  Eigen::VectorXd inverse(const Eigen::VectorXd& z) const;
  /// Scales a standard deviation (not a variance) back to data units.
  double inverse_scale(double sd) const { return sd * std_; }

  double mean() const { return mean_; }
  double stddev() const { return std_; }

 private:
  double mean_ = 0.0;
  double std_ = 1.0;
};

/// Derives the seed of run `counter` from a base seed (SplitMix64 of
/// base + counter * golden gamma), so repeated experiments get independent
/// but reproducible streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter);

}  // namespace graphgp
