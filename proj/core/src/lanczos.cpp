// Restarted block Lanczos for the smallest eigenpairs of a sparse graph
// Laplacian. The Krylov basis V is kept fully orthogonal (two passes of
// classical Gram-Schmidt per vector) together with W = L V, so every restart
// is a plain Rayleigh-Ritz step on H = V^T W. On restart the smallest Ritz
// vectors are kept and the pending Krylov block continues the expansion
// (thick restart).

#include "graphgp/error.hpp"
#include "graphgp/spectral.hpp"
#include "spectral_detail.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace graphgp {
namespace {

// Orthonormal basis of the exact null space: one vector per connected
// component (indicator for D - W, D^1/2 indicator for the normalized kind).
Eigen::MatrixXd null_space_basis(const LaplacianOperator& L) {
  const int n = L.size();
  // Recover the adjacency pattern from the off-diagonal entries.
  std::vector<Edge> edges;
  for (int k = 0; k < L.matrix.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(L.matrix, k); it; ++it)
      if (it.row() < it.col() && it.value() != 0.0)
        edges.push_back({static_cast<int>(it.row()), static_cast<int>(it.col()), 1.0});
  const auto labels = connected_components(WeightedGraph(n, std::move(edges)));
  const int count = component_count(labels);

  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(n, count);
  for (int i = 0; i < n; ++i) {
    double value = 1.0;
    if (L.kind == LaplacianKind::sym_normalized && L.degrees[i] > 0.0) value = std::sqrt(L.degrees[i]);
    basis(i, labels[i]) = value;
  }
  for (int c = 0; c < count; ++c) basis.col(c).normalize();
  return basis;
}

class BlockKrylov {
 public:
  BlockKrylov(const LaplacianOperator& L, const Eigen::MatrixXd& locked, int capacity,
              std::uint64_t seed)
      : L_(L), locked_(locked), rng_(seed), V_(L.size(), capacity), W_(L.size(), capacity) {}

  int dim() const { return dim_; }
  int free_dim() const { return L_.size() - static_cast<int>(locked_.cols()); }

  // Orthogonalizes `x` against the locked vectors, V and `extra`; returns
  // false if nothing of x survives.
  bool orthogonalize(Eigen::VectorXd& x, const Eigen::MatrixXd& extra, int extra_cols) {
    const double initial = x.norm();
    if (initial == 0.0) return false;
    for (int pass = 0; pass < 2; ++pass) {
      if (locked_.cols() > 0) x -= locked_ * (locked_.transpose() * x);
      if (dim_ > 0) x -= V_.leftCols(dim_) * (V_.leftCols(dim_).transpose() * x);
      if (extra_cols > 0) x -= extra.leftCols(extra_cols) * (extra.leftCols(extra_cols).transpose() * x);
    }
    const double remaining = x.norm();
    if (remaining <= 1e-10 * initial) return false;
    x /= remaining;
    return true;
  }

  Eigen::VectorXd random_vector() {
    std::normal_distribution<double> normal;
    Eigen::VectorXd x(L_.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng_);
    return x;
  }

  // Turns the raw block into an orthonormal block orthogonal to everything
  // kept so far, topping up with random directions where needed. The block
  // may come back narrower when the free space is nearly exhausted.
  Eigen::MatrixXd orthonormal_block(const Eigen::MatrixXd& raw) {
    const int want = std::min<int>(static_cast<int>(raw.cols()), free_dim() - dim_);
    Eigen::MatrixXd block(L_.size(), std::max(want, 0));
    int filled = 0;
    for (int j = 0; j < raw.cols() && filled < want; ++j) {
      Eigen::VectorXd x = raw.col(j);
      if (orthogonalize(x, block, filled)) block.col(filled++) = x;
    }
    for (int attempt = 0; filled < want && attempt < 8 * want + 8; ++attempt) {
      Eigen::VectorXd x = random_vector();
      if (orthogonalize(x, block, filled)) block.col(filled++) = x;
    }
    return block.leftCols(filled);
  }

  void append(const Eigen::MatrixXd& block) {
    const int b = static_cast<int>(block.cols());
    V_.middleCols(dim_, b) = block;
    W_.middleCols(dim_, b) = L_.matrix * block;
    dim_ += b;
  }

  Eigen::MatrixXd last_products(int b) const { return W_.middleCols(dim_ - b, b); }

  Eigen::MatrixXd projected() const {
    Eigen::MatrixXd H = V_.leftCols(dim_).transpose() * W_.leftCols(dim_);
    return 0.5 * (H + H.transpose());
  }

  auto basis() const { return V_.leftCols(dim_); }
  auto products() const { return W_.leftCols(dim_); }

  void restart(const Eigen::MatrixXd& ritz_coeffs) {
    const int k = static_cast<int>(ritz_coeffs.cols());
    Eigen::MatrixXd newV = V_.leftCols(dim_) * ritz_coeffs;
    Eigen::MatrixXd newW = W_.leftCols(dim_) * ritz_coeffs;
    V_.leftCols(k) = newV;
    W_.leftCols(k) = newW;
    dim_ = k;
  }

 private:
  const LaplacianOperator& L_;
  const Eigen::MatrixXd& locked_;
  std::mt19937_64 rng_;
  Eigen::MatrixXd V_;
  Eigen::MatrixXd W_;
  int dim_ = 0;
};

}  // namespace

SpectralBasis eigendecompose_truncated(const LaplacianOperator& L, int count,
                                       const LanczosOptions& options) {
  const int n = L.size();
  if (count < 1 || count > n)
    throw InvalidArgument("eigenpair count must lie in [1, " + std::to_string(n) + "]");

  const Eigen::MatrixXd nulls = null_space_basis(L);
  const int k0 = static_cast<int>(nulls.cols());
  if (k0 >= count) {
    return detail::finalize_basis(Eigen::VectorXd::Zero(count), nulls.leftCols(count), L.kind, n);
  }

  const int wanted = count - k0;
  const int free_dim = n - k0;
  const int block = options.block_size > 0 ? std::min(options.block_size, wanted)
                                           : std::clamp(wanted / 4, 1, 6);
  const int keep = std::min(free_dim, wanted + std::min(wanted, 16) + block);
  const int capacity = std::min(free_dim, std::max(keep + 2 * block, 2 * wanted + 4 * block));
  const int max_restarts = options.max_restarts >= 0 ? options.max_restarts : 10 * count + 200;

  BlockKrylov krylov(L, nulls, capacity, options.seed);
  Eigen::MatrixXd start(n, block);
  for (int j = 0; j < block; ++j) start.col(j) = krylov.random_vector();
  Eigen::MatrixXd pending = krylov.orthonormal_block(start);

  Eigen::VectorXd theta;
  Eigen::MatrixXd coeffs;
  Eigen::VectorXd residuals;
  for (int restart = 0;; ++restart) {
    while (krylov.dim() < capacity && pending.cols() > 0) {
      const int room = capacity - krylov.dim();
      if (pending.cols() > room) pending.conservativeResize(Eigen::NoChange, room);
      krylov.append(pending);
      if (krylov.dim() >= capacity) break;
      pending = krylov.orthonormal_block(krylov.last_products(static_cast<int>(pending.cols())));
    }
    // The next block continues the Krylov sequence after a restart.
    if (krylov.dim() < free_dim)
      pending = krylov.orthonormal_block(krylov.last_products(std::min(block, krylov.dim())));
    else
      pending.resize(n, 0);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(krylov.projected());
    if (ritz.info() != Eigen::Success) throw NumericalError("Rayleigh-Ritz eigensolve failed");
    theta = ritz.eigenvalues();
    coeffs = ritz.eigenvectors();

    const Eigen::MatrixXd S = coeffs.leftCols(wanted);
    const Eigen::MatrixXd R =
        krylov.products() * S - krylov.basis() * S * theta.head(wanted).asDiagonal();
    residuals = R.colwise().norm().transpose();
    const double scale = std::max(theta.cwiseAbs().maxCoeff(), 1e-300);
    const bool exhausted = krylov.dim() >= free_dim;
    if (exhausted || residuals.maxCoeff() <= options.tolerance * scale) break;

    if (restart >= max_restarts) {
      std::ostringstream msg;
      msg << "Lanczos did not converge after " << restart << " restarts; residual norms:";
      for (int s = 0; s < wanted; ++s) msg << ' ' << residuals[s];
      throw NumericalError(msg.str());
    }
    krylov.restart(coeffs.leftCols(std::min(keep, krylov.dim())));
  }

  Eigen::VectorXd values(count);
  Eigen::MatrixXd vectors(n, count);
  values.head(k0).setZero();
  values.tail(wanted) = theta.head(wanted);
  vectors.leftCols(k0) = nulls;
  vectors.rightCols(wanted) = krylov.basis() * coeffs.leftCols(wanted);
  return detail::finalize_basis(std::move(values), std::move(vectors), L.kind, n);
}

}  // namespace graphgp
