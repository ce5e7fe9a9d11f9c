#include "graphgp/kernels.hpp"

#include "graphgp/error.hpp"
#include "graphgp/log.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

namespace graphgp {

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::matern: return "matern";
    case KernelFamily::diffusion: return "diffusion";
    case KernelFamily::random_walk: return "random_walk";
    case KernelFamily::inverse_cosine: return "inverse_cosine";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(std::string_view name) {
  if (name == "matern") return KernelFamily::matern;
  if (name == "diffusion" || name == "heat" || name == "squared_exponential") return KernelFamily::diffusion;
  if (name == "random_walk") return KernelFamily::random_walk;
  if (name == "inverse_cosine") return KernelFamily::inverse_cosine;
  throw InvalidArgument("unknown kernel family '" + std::string(name) + "'");
}

void KernelSpec::validate() const {
  auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
  if (!positive(sigma2)) throw InvalidArgument("sigma2 must be positive");
  switch (family) {
    case KernelFamily::matern:
      if (!positive(nu)) throw InvalidArgument("matern kernel requires nu > 0");
      if (!positive(kappa)) throw InvalidArgument("matern kernel requires kappa > 0");
      break;
    case KernelFamily::diffusion:
      if (!positive(kappa)) throw InvalidArgument("diffusion kernel requires kappa > 0");
      break;
    case KernelFamily::random_walk:
      if (laplacian != LaplacianKind::sym_normalized)
        throw InvalidArgument("random_walk kernel requires the sym_normalized Laplacian");
      if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("random_walk kernel requires alpha in [0, 1]");
      if (p < 1) throw InvalidArgument("random_walk kernel requires an integer p >= 1");
      break;
    case KernelFamily::inverse_cosine:
      if (laplacian != LaplacianKind::sym_normalized)
        throw InvalidArgument("inverse_cosine kernel requires the sym_normalized Laplacian");
      break;
  }
}

std::string to_json(const KernelSpec& spec) {
  nlohmann::ordered_json j;
  j["family"] = to_string(spec.family);
  j["nu"] = spec.nu;
  j["kappa"] = spec.kappa;
  j["sigma2"] = spec.sigma2;
  j["alpha"] = spec.alpha;
  j["p"] = spec.p;
  j["laplacian"] = to_string(spec.laplacian);
  j["normalize"] = spec.normalize_variance;
  return j.dump();
}

KernelSpec kernel_spec_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("kernel spec: ") + e.what(), 0);
  }
  if (!j.is_object()) throw ParseError("kernel spec must be a JSON object", 0);
  KernelSpec spec;
  try {
    if (j.contains("family")) spec.family = kernel_family_from_string(j["family"].get<std::string>());
    spec.nu = j.value("nu", spec.nu);
    spec.kappa = j.value("kappa", spec.kappa);
    spec.sigma2 = j.value("sigma2", spec.sigma2);
    spec.alpha = j.value("alpha", spec.alpha);
    spec.p = j.value("p", spec.p);
    if (j.contains("laplacian")) spec.laplacian = laplacian_kind_from_string(j["laplacian"].get<std::string>());
    spec.normalize_variance = j.value("normalize", spec.normalize_variance);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("kernel spec: ") + e.what(), 0);
  }
  spec.validate();
  return spec;
}

SpectralDensity::SpectralDensity(const KernelSpec& spec)
    : family_(spec.family), nu_(spec.nu), kappa_(spec.kappa) {
  if (family_ != KernelFamily::matern && family_ != KernelFamily::diffusion)
    throw InvalidArgument(std::string(to_string(family_)) +
                          " kernel has no closed-form spectral density; use its matrix formula");
  spec.validate();
}

double SpectralDensity::operator()(double lambda) const {
  if (family_ == KernelFamily::matern) return std::pow(2.0 * nu_ / (kappa_ * kappa_) + lambda, -nu_);
  return std::exp(-0.5 * kappa_ * kappa_ * lambda);
}

double SpectralDensity::d_kappa(double lambda) const {
  if (family_ == KernelFamily::matern) {
    const double shift = 2.0 * nu_ / (kappa_ * kappa_) + lambda;
    return 4.0 * nu_ * nu_ / (kappa_ * kappa_ * kappa_) * std::pow(shift, -nu_ - 1.0);
  }
  return -kappa_ * lambda * (*this)(lambda);
}

double SpectralDensity::d_nu(double lambda) const {
  if (family_ != KernelFamily::matern) return 0.0;
  const double shift = 2.0 * nu_ / (kappa_ * kappa_) + lambda;
  return (*this)(lambda) * (-std::log(shift) - 2.0 * nu_ / (kappa_ * kappa_ * shift));
}

void check_basis_matches(const SpectralBasis& basis, const KernelSpec& spec) {
  if (basis.kind != spec.laplacian)
    throw InvalidArgument("kernel expects a " + std::string(to_string(spec.laplacian)) +
                          " basis but got " + std::string(to_string(basis.kind)));
}

Eigen::VectorXd spectral_weights(const SpectralBasis& basis, const KernelSpec& spec) {
  spec.validate();
  check_basis_matches(basis, spec);
  const Eigen::VectorXd& lambda = basis.eigenvalues;
  Eigen::VectorXd psi(lambda.size());
  switch (spec.family) {
    case KernelFamily::matern:
    case KernelFamily::diffusion: {
      const SpectralDensity density(spec);
      for (Eigen::Index s = 0; s < lambda.size(); ++s) psi[s] = density(lambda[s]);
      break;
    }
    case KernelFamily::random_walk: {
      const double step = 1.0 - spec.alpha;
      int clamped = 0;
      for (Eigen::Index s = 0; s < lambda.size(); ++s) {
        psi[s] = std::pow(1.0 - step * lambda[s], spec.p);
        if (psi[s] < 0.0) {
          psi[s] = 0.0;
          ++clamped;
        }
      }
      // Eigenvalues of the normalized Laplacian reach 2 up to round-off.
      if (lambda.size() > 0 && (clamped > 0 || step * lambda.maxCoeff() > 1.0 + 1e-10)) {
        std::ostringstream msg;
        msg << "random_walk kernel: (1 - alpha) * lambda_max = " << step * lambda.maxCoeff()
            << " exceeds 1; " << clamped << " negative spectral weight(s) clamped to 0";
        warn(msg.str());
      }
      break;
    }
    case KernelFamily::inverse_cosine:
      for (Eigen::Index s = 0; s < lambda.size(); ++s)
        psi[s] = std::max(0.0, std::cos(lambda[s] * std::numbers::pi / 4.0));
      break;
  }
  return psi;
}

namespace {

double normalization(const Eigen::VectorXd& psi, int total_dim) {
  const double total = psi.sum();
  if (!(total > 0.0)) throw NumericalError("cannot normalize variance: all spectral weights are zero");
  return static_cast<double>(total_dim) / total;
}

// (1 + lambda / a)^-nu with a = 2 nu / kappa^2, and its kappa and nu
// derivatives. Equals a^nu Psi(lambda); with variance normalization the
// constant a^nu cancels, and this form stays finite for large nu.
struct RescaledMatern {
  Eigen::VectorXd psi, d_kappa, d_nu;
};

RescaledMatern rescaled_matern(const Eigen::VectorXd& lambda, double nu, double kappa) {
  const double a = 2.0 * nu / (kappa * kappa);
  RescaledMatern r{Eigen::VectorXd(lambda.size()), Eigen::VectorXd(lambda.size()), Eigen::VectorXd(lambda.size())};
  for (Eigen::Index s = 0; s < lambda.size(); ++s) {
    const double l = lambda[s];
    const double psi = std::exp(-nu * std::log1p(l / a));
    r.psi[s] = psi;
    r.d_kappa[s] = -psi * 2.0 * nu * l / (kappa * (a + l));
    r.d_nu[s] = psi * (-std::log1p(l / a) + l / (a + l));
  }
  return r;
}

}  // namespace

Eigen::VectorXd rescaled_matern_weights(const Eigen::VectorXd& eigenvalues, double nu, double kappa) {
  if (!(nu > 0.0) || !(kappa > 0.0)) throw InvalidArgument("nu and kappa must be positive");
  return rescaled_matern(eigenvalues, nu, kappa).psi;
}

Eigen::VectorXd scaled_spectral_weights(const SpectralBasis& basis, const KernelSpec& spec) {
  Eigen::VectorXd psi;
  if (spec.family == KernelFamily::matern && spec.normalize_variance) {
    spec.validate();
    check_basis_matches(basis, spec);
    psi = rescaled_matern(basis.eigenvalues, spec.nu, spec.kappa).psi;
  } else {
    psi = spectral_weights(basis, spec);
  }
  const double c = spec.normalize_variance ? normalization(psi, basis.total_dim) : 1.0;
  return spec.sigma2 * c * psi;
}

WeightGradients scaled_spectral_weight_gradients(const SpectralBasis& basis, const KernelSpec& spec) {
  const SpectralDensity density(spec);
  check_basis_matches(basis, spec);
  const Eigen::Index m = basis.size();
  Eigen::VectorXd psi(m), dk(m), dn(m);
  if (spec.family == KernelFamily::matern && spec.normalize_variance) {
    auto r = rescaled_matern(basis.eigenvalues, spec.nu, spec.kappa);
    psi = std::move(r.psi);
    dk = std::move(r.d_kappa);
    dn = std::move(r.d_nu);
  } else {
    for (Eigen::Index s = 0; s < m; ++s) {
      const double l = basis.eigenvalues[s];
      psi[s] = density(l);
      dk[s] = density.d_kappa(l);
      dn[s] = density.d_nu(l);
    }
  }
  WeightGradients g;
  if (!spec.normalize_variance) {
    g.weights = spec.sigma2 * psi;
    g.d_kappa = spec.sigma2 * dk;
    g.d_nu = spec.sigma2 * dn;
    g.d_sigma2 = psi;
    return g;
  }
  const double total = psi.sum();
  const double c = normalization(psi, basis.total_dim);
  // c = n / sum(psi)  =>  dc = -c * sum(dpsi) / sum(psi)
  const double dc_kappa = -c * dk.sum() / total;
  const double dc_nu = -c * dn.sum() / total;
  g.weights = spec.sigma2 * c * psi;
  g.d_kappa = spec.sigma2 * (c * dk + dc_kappa * psi);
  g.d_nu = spec.sigma2 * (c * dn + dc_nu * psi);
  g.d_sigma2 = c * psi;
  return g;
}

Eigen::MatrixXd kernel_matrix(const SpectralBasis& basis, const KernelSpec& spec,
                              std::span<const int> rows, std::span<const int> cols) {
  const Eigen::VectorXd w = scaled_spectral_weights(basis, spec);
  const Eigen::MatrixXd Ur = basis.rows(rows);
  const Eigen::MatrixXd Uc = basis.rows(cols);
  return Ur * w.asDiagonal() * Uc.transpose();
}

Eigen::MatrixXd kernel_matrix(const SpectralBasis& basis, const KernelSpec& spec) {
  const Eigen::VectorXd w = scaled_spectral_weights(basis, spec);
  const Eigen::MatrixXd& U = basis.eigenvectors;
  Eigen::MatrixXd K = U * w.asDiagonal() * U.transpose();
  return 0.5 * (K + K.transpose());
}

Eigen::VectorXd kernel_diagonal(const SpectralBasis& basis, const KernelSpec& spec,
                                std::span<const int> nodes) {
  const Eigen::VectorXd w = scaled_spectral_weights(basis, spec);
  const Eigen::MatrixXd U = basis.rows(nodes);
  return U.array().square().matrix() * w;
}

SparseMatrix matern_precision_sparse(const LaplacianOperator& L, int nu, double kappa) {
  if (nu < 1 || nu > 4)
    throw InvalidArgument("sparse Matern precision supports integer nu in [1, 4]; use the spectral path for nu = " +
                          std::to_string(nu));
  if (!(kappa > 0.0)) throw InvalidArgument("kappa must be positive");
  const int n = L.size();
  SparseMatrix identity(n, n);
  identity.setIdentity();
  const SparseMatrix base = (2.0 * nu / (kappa * kappa)) * identity + L.matrix;
  SparseMatrix result = base;
  for (int k = 1; k < nu; ++k) {
    SparseMatrix next = (result * base).pruned();
    // Symmetrize to remove rounding asymmetry from the product order.
    SparseMatrix t = next.transpose();
    result = 0.5 * (next + t);
  }
  result.makeCompressed();
  return result;
}

Eigen::MatrixXd random_walk_kernel(const LaplacianOperator& L_norm, double alpha, int p, double sigma2,
                                   bool normalize_variance) {
  if (L_norm.kind != LaplacianKind::sym_normalized)
    throw InvalidArgument("random_walk kernel requires the sym_normalized Laplacian");
  KernelSpec spec;
  spec.family = KernelFamily::random_walk;
  spec.alpha = alpha;
  spec.p = p;
  spec.sigma2 = sigma2;
  spec.laplacian = LaplacianKind::sym_normalized;
  spec.normalize_variance = normalize_variance;
  return kernel_matrix(eigendecompose_full(L_norm), spec);
}

Eigen::MatrixXd inverse_cosine_kernel(const SpectralBasis& basis_norm, double sigma2, bool normalize_variance) {
  if (basis_norm.kind != LaplacianKind::sym_normalized)
    throw InvalidArgument("inverse_cosine kernel requires a sym_normalized basis");
  KernelSpec spec;
  spec.family = KernelFamily::inverse_cosine;
  spec.sigma2 = sigma2;
  spec.laplacian = LaplacianKind::sym_normalized;
  spec.normalize_variance = normalize_variance;
  return kernel_matrix(basis_norm, spec);
}

Eigen::MatrixXd separable_product_kernel(const BaseKernel& k_base, const Eigen::MatrixXd& graph_kernel,
                                         const Eigen::MatrixXd& points, std::span<const int> point_index,
                                         std::span<const int> nodes) {
  if (point_index.size() != nodes.size())
    throw InvalidArgument("separable kernel: point and node lists differ in length");
  const auto m = static_cast<Eigen::Index>(nodes.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    if (point_index[i] < 0 || point_index[i] >= points.rows())
      throw InvalidArgument("separable kernel: auxiliary point index out of range");
    if (nodes[i] < 0 || nodes[i] >= graph_kernel.rows())
      throw InvalidArgument("separable kernel: node index out of range");
  }
  Eigen::MatrixXd gram(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd xi = points.row(point_index[i]).transpose();
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Eigen::VectorXd xj = points.row(point_index[j]).transpose();
      gram(i, j) = gram(j, i) = k_base(xi, xj) * graph_kernel(nodes[i], nodes[j]);
    }
  }
  return gram;
}

Eigen::MatrixXd separable_product_kernel_grid(const BaseKernel& k_base, const Eigen::MatrixXd& graph_kernel,
                                              const Eigen::MatrixXd& points) {
  const Eigen::Index m = points.rows();
  const Eigen::Index n = graph_kernel.rows();
  Eigen::MatrixXd base(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      base(a, b) = k_base(points.row(a).transpose(), points.row(b).transpose());
  Eigen::MatrixXd out(m * n, m * n);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) out.block(a * n, b * n, n, n) = base(a, b) * graph_kernel;
  return out;
}

BaseKernel squared_exponential(double lengthscale, double variance) {
  if (!(lengthscale > 0.0) || !(variance > 0.0))
    throw InvalidArgument("squared exponential requires positive lengthscale and variance");
  return [lengthscale, variance](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    return variance * std::exp(-0.5 * (x - y).squaredNorm() / (lengthscale * lengthscale));
  };
}

}  // namespace graphgp
