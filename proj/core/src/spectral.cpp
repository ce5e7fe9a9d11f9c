#include "graphgp/spectral.hpp"

#include "graphgp/error.hpp"
#include "spectral_detail.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace graphgp {

Eigen::MatrixXd SpectralBasis::rows(std::span<const int> nodes) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(nodes.size()), eigenvectors.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] < 0 || nodes[i] >= total_dim)
      throw InvalidArgument("node index " + std::to_string(nodes[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = eigenvectors.row(nodes[i]);
  }
  return out;
}

namespace detail {

void canonicalize_signs(Eigen::MatrixXd& vectors) {
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
    auto col = vectors.col(j);
    const double threshold = 1e-10 * col.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (std::abs(col[i]) > threshold) {
        if (col[i] < 0.0) col = -col;
        break;
      }
    }
  }
}

SpectralBasis finalize_basis(Eigen::VectorXd values, Eigen::MatrixXd vectors, LaplacianKind kind,
                             int total_dim) {
  if (values.size() > 0) {
    const double scale = std::max(std::abs(values[values.size() - 1]), 1e-300);
    if (values[0] < -1e-8 * scale) {
      std::ostringstream msg;
      msg << "Laplacian is not positive semi-definite: smallest eigenvalue " << values[0]
          << " below -1e-8 * " << scale;
      throw NumericalError(msg.str());
    }
    values = values.cwiseMax(0.0);
  }
  canonicalize_signs(vectors);
  SpectralBasis basis;
  basis.eigenvalues = std::move(values);
  basis.eigenvectors = std::move(vectors);
  basis.kind = kind;
  basis.total_dim = total_dim;
  return basis;
}

}  // namespace detail

SpectralBasis eigendecompose_full(const LaplacianOperator& L, int dense_limit) {
  const int n = L.size();
  if (n > dense_limit)
    throw InvalidArgument("graph has " + std::to_string(n) + " nodes, above the dense limit of " +
                          std::to_string(dense_limit) + "; use eigendecompose_truncated");
  if (n == 0) return detail::finalize_basis({}, {}, L.kind, 0);
  Eigen::MatrixXd dense = Eigen::MatrixXd(L.matrix);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
  if (solver.info() != Eigen::Success) throw NumericalError("dense eigensolver failed to converge");
  return detail::finalize_basis(solver.eigenvalues(), solver.eigenvectors(), L.kind, n);
}

Eigen::MatrixXd apply_spectral_function(const SpectralBasis& basis,
                                        const std::function<double(double)>& f) {
  Eigen::VectorXd weights(basis.size());
  for (int s = 0; s < basis.size(); ++s) {
    weights[s] = f(basis.eigenvalues[s]);
    if (!std::isfinite(weights[s])) {
      std::ostringstream msg;
      msg << "spectral function is not finite at eigenvalue " << basis.eigenvalues[s] << " (index "
          << s << ")";
      throw NumericalError(msg.str());
    }
  }
  const Eigen::MatrixXd& U = basis.eigenvectors;
  Eigen::MatrixXd out = U * weights.asDiagonal() * U.transpose();
  // Exact symmetry regardless of summation order.
  return 0.5 * (out + out.transpose());
}

Eigen::VectorXd heat_propagate(const SpectralBasis& basis, const Eigen::VectorXd& v, double t) {
  if (!(t >= 0.0)) throw InvalidArgument("heat propagation time must be non-negative");
  if (v.size() != basis.total_dim) throw InvalidArgument("vector length does not match the graph");
  if (t == 0.0) return v;
  const Eigen::MatrixXd& U = basis.eigenvectors;
  Eigen::VectorXd coeffs = U.transpose() * v;
  coeffs.array() *= (-t * basis.eigenvalues.array()).exp();
  return U * coeffs;
}

std::uint64_t laplacian_content_hash(const LaplacianOperator& L) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  const std::int32_t kind = static_cast<std::int32_t>(L.kind);
  const std::int64_t n = L.size();
  mix(&kind, sizeof kind);
  mix(&n, sizeof n);
  SparseMatrix m = L.matrix;
  m.makeCompressed();
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      const std::int64_t r = it.row(), c = it.col();
      const double v = it.value();
      if (v == 0.0) continue;
      mix(&r, sizeof r);
      mix(&c, sizeof c);
      mix(&v, sizeof v);
    }
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'G', 'G', 'P', 'E', 'I', 'G', '\0', '\0'};

template <class T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
bool get(std::istream& in, T& value) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&value), sizeof(T)));
}

}  // namespace

void write_eigen_cache(const std::string& path, const SpectralBasis& basis, std::uint64_t hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write eigen cache '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put(out, kEigenCacheVersion);
  put(out, static_cast<std::uint32_t>(basis.kind));
  put(out, hash);
  put(out, static_cast<std::int64_t>(basis.total_dim));
  put(out, static_cast<std::int64_t>(basis.size()));
  out.write(reinterpret_cast<const char*>(basis.eigenvalues.data()),
            static_cast<std::streamsize>(sizeof(double) * basis.eigenvalues.size()));
  out.write(reinterpret_cast<const char*>(basis.eigenvectors.data()),
            static_cast<std::streamsize>(sizeof(double) * basis.eigenvectors.size()));
  if (!out) throw Error("failed writing eigen cache '" + path + "'");
}

std::optional<SpectralBasis> read_eigen_cache(const std::string& path, std::uint64_t expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  std::uint32_t version = 0, kind = 0;
  std::uint64_t hash = 0;
  std::int64_t n = 0, count = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    return std::nullopt;
  if (!get(in, version) || version != kEigenCacheVersion) return std::nullopt;
  if (!get(in, kind) || !get(in, hash) || !get(in, n) || !get(in, count)) return std::nullopt;
  if (hash != expected_hash || n < 0 || count < 0 || count > n || kind > 1) return std::nullopt;

  SpectralBasis basis;
  basis.kind = static_cast<LaplacianKind>(kind);
  basis.total_dim = static_cast<int>(n);
  basis.eigenvalues.resize(count);
  basis.eigenvectors.resize(n, count);
  in.read(reinterpret_cast<char*>(basis.eigenvalues.data()),
          static_cast<std::streamsize>(sizeof(double) * count));
  in.read(reinterpret_cast<char*>(basis.eigenvectors.data()),
          static_cast<std::streamsize>(sizeof(double) * n * count));
  if (!in) return std::nullopt;
  return basis;
}

}  // namespace graphgp
