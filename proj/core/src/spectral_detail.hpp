#pragma once

#include "graphgp/spectral.hpp"

namespace graphgp::detail {

// Flips each column so that its first non-negligible entry is positive.
void canonicalize_signs(Eigen::MatrixXd& vectors);

// Validates the PSD tolerance, clamps tiny negative eigenvalues to zero and
// applies the sign convention.
SpectralBasis finalize_basis(Eigen::VectorXd values, Eigen::MatrixXd vectors, LaplacianKind kind,
                             int total_dim);

}  // namespace graphgp::detail
