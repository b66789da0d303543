// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "nora/matrix.hpp"

namespace nora {

/// Thin SVD triple A = u * diag(sigma) * vt with k = min(rows, cols).
///
/// Invariants maintained by every producer in this module:
///  - sigma sorted non-increasing, all entries >= 0;
///  - u^T u = I_k and vt vt^T = I_k (defect below 1e-10 Frobenius);
///  - per column of u, the entry of largest magnitude is non-negative
///    (ties broken by lowest row index), with the compensating sign on
///    the matching row of vt.
struct SvdFactors {
    Matrix u;                   // m x k
    std::vector<double> sigma;  // k
    Matrix vt;                  // k x n

    bool operator==(const SvdFactors&) const = default;
};

/// One-sided Jacobi SVD on the taller orientation (the input is transposed
/// internally when rows < cols). Deterministic: identical input bytes give
/// identical output bytes. Throws ConvergenceError if the off-diagonal mass
/// has not dropped below tol within max_sweeps sweeps.
SvdFactors jacobi_svd(const Matrix& a, double tol = 1e-12, int max_sweeps = 60);

/// First k columns of u, first k sigmas, first k rows of vt.
SvdFactors truncate(const SvdFactors& f, std::size_t k);

/// u * diag(sigma) * vt.
Matrix reconstruct(const SvdFactors& f);

}  // namespace nora
