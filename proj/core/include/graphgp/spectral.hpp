#pragma once

#include "graphgp/graph.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace graphgp {

/// Eigenpairs of a graph Laplacian, ascending, possibly truncated to the
/// `size()` smallest. Columns of `eigenvectors` are orthonormal, and the sign
/// of each column is fixed so that its first non-negligible entry is positive.
struct SpectralBasis {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;  // total_dim x size()
  int total_dim = 0;
  LaplacianKind kind = LaplacianKind::unnormalized;

  int size() const { return static_cast<int>(eigenvalues.size()); }
  bool is_full() const { return size() == total_dim; }
  /// Rows of U for the given nodes (|nodes| x size()).
  Eigen::MatrixXd rows(std::span<const int> nodes) const;
};

inline constexpr int kDefaultDenseLimit = 4096;

/// Dense symmetric eigendecomposition of the whole Laplacian.
/// Throws InvalidArgument when node_count exceeds `dense_limit`.
SpectralBasis eigendecompose_full(const LaplacianOperator& L, int dense_limit = kDefaultDenseLimit);

struct LanczosOptions {
  int block_size = 0;         // 0: pick automatically
  int max_restarts = -1;      // -1: 10 * count + 200
  double tolerance = 1e-8;    // residual, relative to the largest Ritz value
  std::uint64_t seed = 0x5eed;
};

/// The `count` smallest eigenpairs by restarted block Lanczos with full
/// reorthogonalization. The exact null space spanned by per-component
/// indicator vectors is deflated up front.
///
/// Throws NumericalError carrying residual norms on non-convergence.
SpectralBasis eigendecompose_truncated(const LaplacianOperator& L, int count,
                                       const LanczosOptions& options = {});

/// U f(Lambda) U^T. Throws NumericalError if f is not finite on some eigenvalue.
Eigen::MatrixXd apply_spectral_function(const SpectralBasis& basis,
                                        const std::function<double(double)>& f);

/// e^{-t L} v through the basis. With a truncated basis, the component of v
/// outside span(U) is dropped.
Eigen::VectorXd heat_propagate(const SpectralBasis& basis, const Eigen::VectorXd& v, double t);

// On-disk eigenpair cache. Layout (little-endian):
//   char[8] magic "GGPEIG\0\0", uint32 version, uint32 kind,
//   uint64 content hash, int64 n, int64 count,
//   float64[count] eigenvalues, float64[n*count] eigenvectors (column-major).
inline constexpr std::uint32_t kEigenCacheVersion = 1;

/// FNV-1a hash over the Laplacian kind, size and canonical triplets.
std::uint64_t laplacian_content_hash(const LaplacianOperator& L);

void write_eigen_cache(const std::string& path, const SpectralBasis& basis, std::uint64_t hash);
/// Returns nullopt if the file is missing or its header does not match `expected_hash`.
std::optional<SpectralBasis> read_eigen_cache(const std::string& path, std::uint64_t expected_hash);

}  // namespace graphgp
