#pragma once

#include "graphgp/graph.hpp"
#include "graphgp/spectral.hpp"

#include <Eigen/Core>

#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace graphgp {

enum class KernelFamily { matern, diffusion, random_walk, inverse_cosine };

std::string_view to_string(KernelFamily family);
KernelFamily kernel_family_from_string(std::string_view name);

/// Kernel family plus hyperparameters.
///
/// matern:         Psi(l) = (2 nu / kappa^2 + l)^-nu
/// diffusion:      Psi(l) = exp(-kappa^2 / 2 * l)
/// random_walk:    Psi(l) = (1 - (1 - alpha) l)^p   (normalized Laplacian only)
/// inverse_cosine: Psi(l) = cos(l * pi / 4)          (normalized Laplacian only)
///
/// The kernel is sigma2 * c * sum_s Psi(l_s) u_s u_s^T with c = 1, or, when
/// normalize_variance is set, c = n / sum_s Psi(l_s) so that the average
/// prior variance over all nodes equals sigma2.
struct KernelSpec {
  KernelFamily family = KernelFamily::matern;
  double nu = 1.5;
  double kappa = 3.0;
  double sigma2 = 1.0;
  double alpha = 0.0;
  int p = 1;
  LaplacianKind laplacian = LaplacianKind::unnormalized;
  bool normalize_variance = false;

  /// Throws InvalidArgument describing the first violated constraint.
  void validate() const;

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

/// JSON object {"family","nu","kappa","sigma2","alpha","p","laplacian","normalize"}.
std::string to_json(const KernelSpec& spec);
KernelSpec kernel_spec_from_json(std::string_view json);

/// Psi(lambda) for the matern and diffusion families with its partial
/// derivatives in kappa and nu (the latter is zero for diffusion).
class SpectralDensity {
 public:
  explicit SpectralDensity(const KernelSpec& spec);

  double operator()(double lambda) const;
  double d_kappa(double lambda) const;
  double d_nu(double lambda) const;

 private:
  KernelFamily family_;
  double nu_;
  double kappa_;
};

inline SpectralDensity spectral_density(const KernelSpec& spec) { return SpectralDensity(spec); }

/// Per-eigenpair prior weight Psi(lambda_s), without sigma2 or normalization.
/// Random-walk weights below zero are clamped to zero with a warning.
Eigen::VectorXd spectral_weights(const SpectralBasis& basis, const KernelSpec& spec);

/// Matern weights multiplied by (2 nu / kappa^2)^nu, i.e.
/// (1 + kappa^2 lambda / (2 nu))^-nu. Finite for large nu, where Psi itself
/// underflows; tends to the diffusion weights as nu grows.
Eigen::VectorXd rescaled_matern_weights(const Eigen::VectorXd& eigenvalues, double nu, double kappa);

/// Weights including sigma2 and the variance normalization constant:
/// K = U diag(w) U^T.
Eigen::VectorXd scaled_spectral_weights(const SpectralBasis& basis, const KernelSpec& spec);

/// Scaled weights and their derivatives with respect to kappa, nu and sigma2
/// (matern and diffusion only).
struct WeightGradients {
  Eigen::VectorXd weights;
  Eigen::VectorXd d_kappa;
  Eigen::VectorXd d_nu;
  Eigen::VectorXd d_sigma2;
};
WeightGradients scaled_spectral_weight_gradients(const SpectralBasis& basis, const KernelSpec& spec);

/// Throws InvalidArgument if the basis was built from the wrong Laplacian kind.
void check_basis_matches(const SpectralBasis& basis, const KernelSpec& spec);

/// k(rows[i], cols[j]).
Eigen::MatrixXd kernel_matrix(const SpectralBasis& basis, const KernelSpec& spec,
                              std::span<const int> rows, std::span<const int> cols);
/// Kernel over all nodes.
Eigen::MatrixXd kernel_matrix(const SpectralBasis& basis, const KernelSpec& spec);
/// k(i, i) for each node.
Eigen::VectorXd kernel_diagonal(const SpectralBasis& basis, const KernelSpec& spec,
                                std::span<const int> nodes);

/// (2 nu / kappa^2 I + L)^nu for integer nu in [1, 4], by repeated sparse
/// products. Its inverse is the Matern kernel with sigma2 = 1, no normalization.
SparseMatrix matern_precision_sparse(const LaplacianOperator& L, int nu, double kappa);

/// sigma2 c (I - (1 - alpha) L_norm)^p via the spectrum of L_norm.
Eigen::MatrixXd random_walk_kernel(const LaplacianOperator& L_norm, double alpha, int p, double sigma2,
                                   bool normalize_variance = false);

/// sigma2 c sum_s cos(lambda_s pi / 4) u_s u_s^T over a normalized basis.
Eigen::MatrixXd inverse_cosine_kernel(const SpectralBasis& basis_norm, double sigma2,
                                      bool normalize_variance = false);

/// Gram matrix of k((x, i), (x', j)) = k_base(x, x') K_graph(i, j) over a list
/// of (auxiliary input, node) pairs. Auxiliary inputs are rows of `points`.
using BaseKernel = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
Eigen::MatrixXd separable_product_kernel(const BaseKernel& k_base, const Eigen::MatrixXd& graph_kernel,
                                         const Eigen::MatrixXd& points, std::span<const int> point_index,
                                         std::span<const int> nodes);
/// Kronecker form for the full grid points x nodes: K_base (x) K_graph.
Eigen::MatrixXd separable_product_kernel_grid(const BaseKernel& k_base,
                                              const Eigen::MatrixXd& graph_kernel,
                                              const Eigen::MatrixXd& points);

/// exp(-|x - x'|^2 / (2 l^2)) scaled by `variance`.
BaseKernel squared_exponential(double lengthscale, double variance = 1.0);

}  // namespace graphgp
