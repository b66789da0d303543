// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "nora/matrix.hpp"

namespace nora {

/// Classic low-rank adapter: delta = scale * b * a with trainable a, b.
/// At standard initialization b is all-zero, so the delta path contributes
/// exactly nothing.
struct LoraAdapter {
    Matrix a;  // r x n, trainable, Gaussian init with stddev 1/sqrt(r)
    Matrix b;  // m x r, trainable, zero init
    double scale = 1.0;

    std::size_t m() const { return b.rows(); }
    std::size_t n() const { return a.cols(); }
    std::size_t r() const { return a.rows(); }

    bool operator==(const LoraAdapter&) const = default;
};

/// Nested low-rank adapter: delta = scale * u_r * b_inner * a_inner * vt_r.
/// The outer factors come from the truncated SVD of the weight being adapted
/// and are frozen: training must never change a byte of u_r or vt_r.
///
/// Factor names follow position (u_r applies on the left, vt_r on the
/// right); some write-ups of this scheme label the outer factors A/B in the
/// opposite order, which is a reliable source of shape bugs.
struct NoraAdapter {
    Matrix u_r;      // m x r_out, frozen
    Matrix vt_r;     // r_out x n, frozen
    Matrix b_inner;  // r_out x r_in, trainable
    Matrix a_inner;  // r_in x r_out, trainable
    double scale = 1.0;
    bool residual_init = false;  // base weight should be used as w - delta_init

    std::size_t m() const { return u_r.rows(); }
    std::size_t n() const { return vt_r.cols(); }
    std::size_t r_out() const { return u_r.cols(); }
    std::size_t r_in() const { return b_inner.cols(); }

    bool operator==(const NoraAdapter&) const = default;
};

/// Intermediates saved by a forward pass for the matching backward pass.
/// Valid only for the parameter values that produced it. LoRA passes leave
/// z2 empty.
struct ForwardCache {
    Matrix x;   // n x batch
    Matrix z1;  // r_out x batch (vt_r * x), or r x batch (a * x) for LoRA
    Matrix z2;  // r_in x batch (a_inner * z1); unused by LoRA
};

struct LoraGrads {
    Matrix da;  // r x n
    Matrix db;  // m x r
    Matrix dx;  // n x batch
};

struct NoraGrads {
    Matrix db_inner;  // r_out x r_in
    Matrix da_inner;  // r_in x r_out
    Matrix dx;        // n x batch
};

/// Gaussian a (stddev 1/sqrt(r)), zero b. Deterministic in seed.
/// Throws RankError unless 1 <= r <= min(m, n); warns on stderr when
/// r == min(m, n) since the scheme expects r well below that bound.
LoraAdapter lora_init(std::size_t m, std::size_t n, std::size_t r,
                      std::uint64_t seed, double scale = 1.0);

/// SVD-based initialization of a nested adapter:
///   (u, sigma, vt) = jacobi_svd(w); keep the leading r_out columns/rows;
///   s = elementwise sqrt of diag(sigma_1..sigma_r_out);
///   b_inner = first r_in columns of s, a_inner = first r_in rows of s.
/// Consequence: b_inner * a_inner = diag(sigma_1..sigma_r_in, 0, ..., 0), so
/// the initial delta equals the rank-r_in truncated SVD of w.
///
/// `alg1_block_slicing` switches to the alternative published slicing that
/// takes r_out/r_in-wide blocks of s instead; it is off by default because
/// only the r_in-wide slicing matches the 2*r_out*r_in trainable-parameter
/// count.
NoraAdapter nora_init(const Matrix& w, std::size_t r_out, std::size_t r_in,
                      double scale = 1.0, bool residual_init = false,
                      bool alg1_block_slicing = false);

/// scale * b * a (materialized; for diagnostics and merging).
Matrix lora_delta(const LoraAdapter& ad);

/// scale * u_r * b_inner * a_inner * vt_r (materialized). Rank <= r_in.
Matrix nora_delta(const NoraAdapter& ad);

/// h = w*x + delta*x, with the delta applied factored (the full m x n delta
/// is never formed). Returns h and the cache for backward.
std::pair<Matrix, ForwardCache> lora_forward(const LoraAdapter& ad, const Matrix& w,
                                             const Matrix& x);
std::pair<Matrix, ForwardCache> nora_forward(const NoraAdapter& ad, const Matrix& w,
                                             const Matrix& x);

/// Analytic gradients for dh = dLoss/dh. Both LoRA factors are trainable;
/// for NoRA only the inner factors receive gradients (no gradient objects
/// exist for u_r / vt_r).
LoraGrads lora_backward(const LoraAdapter& ad, const Matrix& w,
                        const ForwardCache& cache, const Matrix& dh);
NoraGrads nora_backward(const NoraAdapter& ad, const Matrix& w,
                        const ForwardCache& cache, const Matrix& dh);

/// Base weight the adapter is meant to run against: w itself, or
/// w - scale * best-rank-r_in(w) when the adapter was residual-initialized.
Matrix effective_base(const NoraAdapter& ad, const Matrix& w);
Matrix effective_base(const LoraAdapter& ad, const Matrix& w);

/// Folds the adapter into the weight so inference needs no adapter path:
/// merged * x reproduces the adapted forward on any x. Residual-initialized
/// adapters merge against their effective base.
Matrix merge(const LoraAdapter& ad, const Matrix& w);
Matrix merge(const NoraAdapter& ad, const Matrix& w);

/// LoRA: r*(m+n). NoRA: 2*r_out*r_in (frozen factors excluded).
std::uint64_t trainable_param_count(const LoraAdapter& ad);
std::uint64_t trainable_param_count(const NoraAdapter& ad);

}  // namespace nora
