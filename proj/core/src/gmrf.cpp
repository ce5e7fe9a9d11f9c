#include "graphgp/error.hpp"
#include "graphgp/regression.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include <sstream>

namespace graphgp {

PosteriorSummary gmrf_posterior(const SparseMatrix& precision, double noise_variance,
                                std::span<const int> train_nodes, const Eigen::VectorXd& targets,
                                std::span<const int> query, CovarianceMode mode) {
  const Eigen::Index n = precision.rows();
  if (precision.cols() != n) throw InvalidArgument("precision matrix must be square");
  if (!(noise_variance > 0.0)) throw InvalidArgument("noise variance must be positive");
  if (static_cast<Eigen::Index>(train_nodes.size()) != targets.size())
    throw InvalidArgument("number of training nodes and targets differ");
  auto check = [n](int node) {
    if (node < 0 || node >= n) throw InvalidArgument("node index " + std::to_string(node) + " out of range");
  };
  for (int x : train_nodes) check(x);
  for (int q : query) check(q);

  // Posterior precision Q + P^T P / s and information vector P^T y / s.
  SparseMatrix post = precision;
  Eigen::VectorXd info = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < train_nodes.size(); ++i) {
    post.coeffRef(train_nodes[i], train_nodes[i]) += 1.0 / noise_variance;
    info[train_nodes[i]] += targets[static_cast<Eigen::Index>(i)] / noise_variance;
  }
  post.makeCompressed();

  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(post);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "sparse Cholesky of the posterior precision failed (n = " << n << ", nnz(Q) = " << precision.nonZeros()
        << ", nnz(posterior precision) = " << post.nonZeros() << ")";
    throw NumericalError(msg.str());
  }

  const Eigen::VectorXd full_mean = llt.solve(info);
  PosteriorSummary out;
  const auto q = static_cast<Eigen::Index>(query.size());
  out.mean.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) out.mean[i] = full_mean[query[i]];

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, q);
  for (Eigen::Index i = 0; i < q; ++i) rhs(query[i], i) = 1.0;
  const Eigen::MatrixXd columns = llt.solve(rhs);
  out.variance.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) out.variance[i] = columns(query[i], i);
  if (mode == CovarianceMode::full) {
    out.covariance.resize(q, q);
    for (Eigen::Index i = 0; i < q; ++i)
      for (Eigen::Index j = 0; j < q; ++j) out.covariance(i, j) = columns(query[i], j);
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  }
  return out;
}

}  // namespace graphgp
