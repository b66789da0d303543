// SPDX-License-Identifier: Apache-2.0
#include "nora/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "nora/error.hpp"

namespace nora {

namespace {

// Orthogonality of columns i, j of b measured relative to their norms.
double relative_offdiag(const Matrix& b, std::size_t i, std::size_t j) {
    double dot_ii = 0.0, dot_jj = 0.0, dot_ij = 0.0;
    for (std::size_t k = 0; k < b.rows(); ++k) {
        dot_ii += b(k, i) * b(k, i);
        dot_ij += b(k, i) * b(k, j);
        dot_jj += b(k, j) * b(k, j);
    }
    const double denom = std::sqrt(dot_ii) * std::sqrt(dot_jj);
    return denom == 0.0 ? 0.0 : std::abs(dot_ij) / denom;
}

void rotate_columns(Matrix& m, std::size_t i, std::size_t j, double c, double s) {
    for (std::size_t k = 0; k < m.rows(); ++k) {
        const double left = c * m(k, i) - s * m(k, j);
        const double right = s * m(k, i) + c * m(k, j);
        m(k, i) = left;
        m(k, j) = right;
    }
}

// One sweep of cyclic one-sided Jacobi over all column pairs of b, with the
// same rotations accumulated into v. Returns the largest relative
// off-diagonal value seen before rotating.
double jacobi_sweep(Matrix& b, Matrix& v, double tol) {
    const std::size_t n = b.cols();
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot_ii = 0.0, dot_jj = 0.0, dot_ij = 0.0;
            for (std::size_t k = 0; k < b.rows(); ++k) {
                dot_ii += b(k, i) * b(k, i);
                dot_ij += b(k, i) * b(k, j);
                dot_jj += b(k, j) * b(k, j);
            }
            const double denom = std::sqrt(dot_ii) * std::sqrt(dot_jj);
            if (denom == 0.0) continue;
            const double rel = std::abs(dot_ij) / denom;
            worst = std::max(worst, rel);
            if (rel <= tol) continue;

            const double zeta = (dot_jj - dot_ii) / (2.0 * dot_ij);
            double t;
            if (std::abs(zeta) > 1e150) {
                t = 1.0 / (2.0 * zeta);  // asymptotic form, avoids zeta^2 overflow
            } else {
                const double sign = zeta >= 0.0 ? 1.0 : -1.0;
                t = sign / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
            }
            const double c = 1.0 / std::sqrt(1.0 + t * t);
            const double s = c * t;
            rotate_columns(b, i, j, c, s);
            rotate_columns(v, i, j, c, s);
        }
    }
    return worst;
}

// Deterministic orthonormal completion: returns the canonical basis vector
// with the largest residual after projecting out the accepted columns of u
// (two Gram-Schmidt passes), normalized.
std::vector<double> completion_column(const Matrix& u,
                                      const std::vector<std::size_t>& accepted) {
    const std::size_t m = u.rows();
    std::vector<double> best;
    double best_norm2 = -1.0;
    for (std::size_t cand = 0; cand < m; ++cand) {
        std::vector<double> col(m, 0.0);
        col[cand] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t a : accepted) {
                double proj = 0.0;
                for (std::size_t k = 0; k < m; ++k) proj += col[k] * u(k, a);
                for (std::size_t k = 0; k < m; ++k) col[k] -= proj * u(k, a);
            }
        }
        double norm2 = 0.0;
        for (double vkk : col) norm2 += vkk * vkk;
        if (norm2 > best_norm2) {
            best_norm2 = norm2;
            best = std::move(col);
        }
    }
    const double inv = 1.0 / std::sqrt(best_norm2);
    for (double& vkk : best) vkk *= inv;
    return best;
}

void canonicalize_signs(Matrix& u, Matrix& vt) {
    for (std::size_t j = 0; j < u.cols(); ++j) {
        std::size_t arg = 0;
        double largest = std::abs(u(0, j));
        for (std::size_t i = 1; i < u.rows(); ++i) {
            if (std::abs(u(i, j)) > largest) {
                largest = std::abs(u(i, j));
                arg = i;
            }
        }
        if (u(arg, j) < 0.0) {
            for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
            for (std::size_t i = 0; i < vt.cols(); ++i) vt(j, i) = -vt(j, i);
        }
    }
}

// Factorization of a tall-or-square matrix (rows >= cols), thin, unsorted
// signs, sorted sigma.
SvdFactors decompose_tall(const Matrix& a, double tol, int max_sweeps) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Matrix b = a;
    Matrix v = Matrix::identity(n);

    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (jacobi_sweep(b, v, tol) <= tol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        // The final sweep's rotations may have finished the job; measure.
        double off = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                off = std::max(off, relative_offdiag(b, i, j));
            }
        }
        if (off > tol) {
            throw ConvergenceError(
                "jacobi_svd: no convergence after " + std::to_string(max_sweeps) +
                    " sweeps (relative off-diagonal " + std::to_string(off) + ")",
                off);
        }
    }

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (std::size_t k = 0; k < m; ++k) sum += b(k, j) * b(k, j);
        norms[j] = std::sqrt(sum);
    }

    // Order by descending norm; ties keep original column order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    const double sigma_max = norms.empty() ? 0.0 : norms[order[0]];
    // Below this, a column direction is rounding noise and gets replaced by
    // a synthesized orthonormal completion (its tiny norm is kept as sigma).
    const double direction_floor = sigma_max * 1e-13;

    SvdFactors f;
    f.u = Matrix(m, n);
    f.sigma.resize(n);
    f.vt = Matrix(n, n);
    std::vector<std::size_t> accepted;
    std::vector<std::size_t> synthesized;
    for (std::size_t pos = 0; pos < n; ++pos) {
        const std::size_t src = order[pos];
        f.sigma[pos] = norms[src];
        for (std::size_t i = 0; i < n; ++i) f.vt(pos, i) = v(i, src);
        if (norms[src] > direction_floor && norms[src] > 0.0) {
            const double inv = 1.0 / norms[src];
            for (std::size_t k = 0; k < m; ++k) f.u(k, pos) = b(k, src) * inv;
            accepted.push_back(pos);
        } else {
            synthesized.push_back(pos);
        }
    }
    for (std::size_t pos : synthesized) {
        const auto col = completion_column(f.u, accepted);
        for (std::size_t k = 0; k < m; ++k) f.u(k, pos) = col[k];
        accepted.push_back(pos);
    }
    return f;
}

}  // namespace

SvdFactors jacobi_svd(const Matrix& a, double tol, int max_sweeps) {
    if (a.rows() == 0 || a.cols() == 0) {
        throw ShapeError("jacobi_svd: empty matrix " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()));
    }
    if (!(tol > 0.0)) throw Error("jacobi_svd: tol must be positive");
    if (max_sweeps < 1) throw Error("jacobi_svd: max_sweeps must be >= 1");
    if (!all_finite(a)) throw Error("jacobi_svd: input has non-finite entries");

    SvdFactors f;
    if (a.rows() >= a.cols()) {
        f = decompose_tall(a, tol, max_sweeps);
    } else {
        // a = (u' sigma vt')^T of the transpose: swap the roles of the factors.
        SvdFactors t = decompose_tall(transpose(a), tol, max_sweeps);
        f.u = transpose(t.vt);
        f.sigma = std::move(t.sigma);
        f.vt = transpose(t.u);
    }
    canonicalize_signs(f.u, f.vt);
    return f;
}

SvdFactors truncate(const SvdFactors& f, std::size_t k) {
    if (k < 1 || k > f.sigma.size()) {
        throw RankError("truncate: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(f.sigma.size()) + "]");
    }
    SvdFactors out;
    out.u = Matrix(f.u.rows(), k);
    for (std::size_t i = 0; i < f.u.rows(); ++i) {
        for (std::size_t j = 0; j < k; ++j) out.u(i, j) = f.u(i, j);
    }
    out.sigma.assign(f.sigma.begin(), f.sigma.begin() + static_cast<std::ptrdiff_t>(k));
    out.vt = Matrix(k, f.vt.cols());
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < f.vt.cols(); ++j) out.vt(i, j) = f.vt(i, j);
    }
    return out;
}

Matrix reconstruct(const SvdFactors& f) {
    if (f.u.cols() != f.sigma.size() || f.vt.rows() != f.sigma.size()) {
        throw ShapeError("reconstruct: inconsistent factors u " +
                         std::to_string(f.u.rows()) + "x" + std::to_string(f.u.cols()) +
                         ", sigma length " + std::to_string(f.sigma.size()) + ", vt " +
                         std::to_string(f.vt.rows()) + "x" + std::to_string(f.vt.cols()));
    }
    Matrix scaled = f.u;
    for (std::size_t i = 0; i < scaled.rows(); ++i) {
        for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= f.sigma[j];
    }
    return matmul(scaled, f.vt);
}

}  // namespace nora
