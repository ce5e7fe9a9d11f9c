#include "graphgp/training.hpp"

#include "graphgp/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

namespace graphgp {

AdamState::AdamState(Eigen::Index size, const AdamConfig& config)
    : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void AdamState::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
                     std::span<const std::string> names) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw InvalidArgument("ADAM: parameter/gradient size does not match optimizer state");
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      const std::string name =
          static_cast<std::size_t>(i) < names.size() ? names[i] : "parameter " + std::to_string(i);
      throw NumericalError("ADAM: non-finite gradient for " + name);
    }
  }
  ++step_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grads;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
}

double SoftplusTransform::forward(double u) const {
  // log1p(exp(u)) without overflow.
  const double sp = u > 30.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
  return lower + sp;
}

double SoftplusTransform::inverse(double x) const {
  const double y = x - lower;
  if (!(y > 0.0)) throw InvalidArgument("softplus inverse: value must exceed the lower bound");
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

double SoftplusTransform::derivative(double u) const { return 1.0 / (1.0 + std::exp(-u)); }

Split random_split(std::span<const int> population, int n_train, std::uint64_t seed, int n_test) {
  const auto total = static_cast<int>(population.size());
  if (n_train < 0 || n_train > total)
    throw InvalidArgument("cannot draw " + std::to_string(n_train) + " training nodes from a population of " +
                          std::to_string(total));
  if (n_test > total - n_train)
    throw InvalidArgument("cannot draw " + std::to_string(n_test) + " test nodes after training selection");
  std::unordered_set<int> unique(population.begin(), population.end());
  if (static_cast<int>(unique.size()) != total) throw InvalidArgument("split population has duplicates");

  std::vector<int> order(population.begin(), population.end());
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates with an explicit uniform draw so the sequence does
  // not depend on the standard library's shuffle implementation.
  const int needed = n_test < 0 ? total : n_train + n_test;
  for (int i = 0; i < std::min(needed, total - 1); ++i) {
    const auto span = static_cast<std::uint64_t>(total - i);
    const int j = i + static_cast<int>(rng() % span);
    std::swap(order[i], order[j]);
  }
  Split split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.test.assign(order.begin() + n_train, order.begin() + (n_test < 0 ? total : n_train + n_test));
  return split;
}

double mean_squared_error(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truth) {
  if (predictions.size() != truth.size()) throw InvalidArgument("MSE: length mismatch");
  if (truth.size() == 0) throw InvalidArgument("MSE: empty input");
  return (predictions - truth).squaredNorm() / static_cast<double>(truth.size());
}

double accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) throw InvalidArgument("accuracy: length mismatch");
  if (truth.empty()) throw InvalidArgument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

Standardizer Standardizer::fit(const Eigen::VectorXd& y_train) {
  if (y_train.size() == 0) throw InvalidArgument("standardize: empty training targets");
  Standardizer s;
  s.mean_ = y_train.mean();
  s.std_ = std::sqrt((y_train.array() - s.mean_).square().mean());
  if (!(s.std_ > 0.0)) throw InvalidArgument("standardize: training targets have zero standard deviation");
  return s;
}

Eigen::VectorXd Standardizer::transform(const Eigen::VectorXd& y) const {
  return (y.array() - mean_) / std_;
}

Eigen::VectorXd Standardizer::inverse(const Eigen::VectorXd& z) const { return z.array() * std_ + mean_; }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter) {
  std::uint64_t z = base + (counter + 1) * 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace graphgp
