// SPDX-License-Identifier: Apache-2.0
#include "nora/adapter.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "nora/error.hpp"
#include "nora/svd.hpp"

namespace nora {

namespace {

std::string shape_of(const Matrix& a) {
    return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace

LoraAdapter lora_init(std::size_t m, std::size_t n, std::size_t r,
                      std::uint64_t seed, double scale) {
    const std::size_t cap = std::min(m, n);
    if (m == 0 || n == 0 || r < 1 || r > cap) {
        throw RankError("lora_init: rank " + std::to_string(r) + " outside [1, " +
                        std::to_string(cap) + "] for " + std::to_string(m) + "x" +
                        std::to_string(n));
    }
    if (r == cap) {
        std::fprintf(stderr, "warning: lora_init rank %zu equals min(m, n); "
                             "low-rank adapters expect r well below it\n", r);
    }
    LoraAdapter ad;
    Rng rng(seed);
    ad.a = random_matrix(r, n, rng, 1.0 / std::sqrt(static_cast<double>(r)));
    ad.b = Matrix(m, r);
    ad.scale = scale;
    return ad;
}

NoraAdapter nora_init(const Matrix& w, std::size_t r_out, std::size_t r_in,
                      double scale, bool residual_init, bool alg1_block_slicing) {
    const std::size_t cap = std::min(w.rows(), w.cols());
    if (r_in < 1 || r_in > r_out || r_out > cap) {
        throw RankError("nora_init: need 1 <= r_in <= r_out <= " + std::to_string(cap) +
                        ", got r_out=" + std::to_string(r_out) +
                        " r_in=" + std::to_string(r_in));
    }
    const SvdFactors f = jacobi_svd(w);
    if (f.sigma[0] > 0.0 && f.sigma[r_out - 1] < 1e-12 * f.sigma[0]) {
        std::fprintf(stderr, "warning: nora_init outer spectrum is degenerate "
                             "(sigma[%zu]=%g vs sigma[0]=%g)\n",
                     r_out - 1, f.sigma[r_out - 1], f.sigma[0]);
    }

    NoraAdapter ad;
    ad.u_r = Matrix(w.rows(), r_out);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < r_out; ++j) ad.u_r(i, j) = f.u(i, j);
    }
    ad.vt_r = Matrix(r_out, w.cols());
    for (std::size_t i = 0; i < r_out; ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) ad.vt_r(i, j) = f.vt(i, j);
    }

    // s = sqrt of the leading singular values as an r_out x r_out diagonal;
    // the inner factors are slices of s, so b_inner * a_inner starts as
    // diag(sigma_1 .. sigma_r_in, 0, ..).
    Matrix s(r_out, r_out);
    for (std::size_t i = 0; i < r_out; ++i) s(i, i) = std::sqrt(f.sigma[i]);
    const std::size_t width = alg1_block_slicing ? r_out / r_in : r_in;
    ad.b_inner = Matrix(r_out, width);
    for (std::size_t i = 0; i < r_out; ++i) {
        for (std::size_t j = 0; j < width; ++j) ad.b_inner(i, j) = s(i, j);
    }
    ad.a_inner = Matrix(width, r_out);
    for (std::size_t i = 0; i < width; ++i) {
        for (std::size_t j = 0; j < r_out; ++j) ad.a_inner(i, j) = s(i, j);
    }
    ad.scale = scale;
    ad.residual_init = residual_init;
    return ad;
}

Matrix lora_delta(const LoraAdapter& ad) {
    return ad.scale * matmul(ad.b, ad.a);
}

Matrix nora_delta(const NoraAdapter& ad) {
    return ad.scale * matmul(matmul(ad.u_r, matmul(ad.b_inner, ad.a_inner)), ad.vt_r);
}

std::pair<Matrix, ForwardCache> lora_forward(const LoraAdapter& ad, const Matrix& w,
                                             const Matrix& x) {
    require(w.rows() == ad.m() && w.cols() == ad.n(),
            "lora_forward: weight " + shape_of(w) + " does not match adapter " +
                std::to_string(ad.m()) + "x" + std::to_string(ad.n()));
    require(x.rows() == ad.n(), "lora_forward: input " + shape_of(x) +
                                    " does not match weight " + shape_of(w));
    ForwardCache cache;
    cache.x = x;
    cache.z1 = matmul(ad.a, x);
    Matrix h = matmul(w, x) + ad.scale * matmul(ad.b, cache.z1);
    return {std::move(h), std::move(cache)};
}

std::pair<Matrix, ForwardCache> nora_forward(const NoraAdapter& ad, const Matrix& w,
                                             const Matrix& x) {
    require(w.rows() == ad.m() && w.cols() == ad.n(),
            "nora_forward: weight " + shape_of(w) + " does not match adapter " +
                std::to_string(ad.m()) + "x" + std::to_string(ad.n()));
    require(x.rows() == ad.n(), "nora_forward: input " + shape_of(x) +
                                    " does not match weight " + shape_of(w));
    ForwardCache cache;
    cache.x = x;
    cache.z1 = matmul(ad.vt_r, x);
    cache.z2 = matmul(ad.a_inner, cache.z1);
    Matrix h = matmul(w, x) + ad.scale * matmul(ad.u_r, matmul(ad.b_inner, cache.z2));
    return {std::move(h), std::move(cache)};
}

LoraGrads lora_backward(const LoraAdapter& ad, const Matrix& w,
                        const ForwardCache& cache, const Matrix& dh) {
    require(dh.rows() == ad.m() && dh.cols() == cache.x.cols(),
            "lora_backward: dh " + shape_of(dh) + " does not match cache batch " +
                shape_of(cache.x));
    require(cache.z1.rows() == ad.r() && cache.z1.cols() == cache.x.cols(),
            "lora_backward: stale cache z1 " + shape_of(cache.z1));
    LoraGrads g;
    Matrix bt_dh = matmul(transpose(ad.b), dh);             // r x batch
    g.db = ad.scale * matmul(dh, transpose(cache.z1));      // m x r
    g.da = ad.scale * matmul(bt_dh, transpose(cache.x));    // r x n
    g.dx = matmul(transpose(w), dh) +
           ad.scale * matmul(transpose(ad.a), bt_dh);       // n x batch
    return g;
}

NoraGrads nora_backward(const NoraAdapter& ad, const Matrix& w,
                        const ForwardCache& cache, const Matrix& dh) {
    require(dh.rows() == ad.m() && dh.cols() == cache.x.cols(),
            "nora_backward: dh " + shape_of(dh) + " does not match cache batch " +
                shape_of(cache.x));
    require(cache.z1.rows() == ad.r_out() && cache.z2.rows() == ad.r_in() &&
                cache.z1.cols() == cache.x.cols() && cache.z2.cols() == cache.x.cols(),
            "nora_backward: stale cache z1 " + shape_of(cache.z1) + " z2 " +
                shape_of(cache.z2));
    NoraGrads g;
    Matrix gu = ad.scale * matmul(transpose(ad.u_r), dh);       // r_out x batch
    g.db_inner = matmul(gu, transpose(cache.z2));               // r_out x r_in
    g.da_inner = matmul(transpose(ad.b_inner),
                        matmul(gu, transpose(cache.z1)));       // r_in x r_out
    g.dx = matmul(transpose(w), dh) +
           matmul(transpose(ad.vt_r),
                  matmul(transpose(ad.a_inner),
                         matmul(transpose(ad.b_inner), gu)));   // n x batch
    return g;
}

Matrix effective_base(const NoraAdapter& ad, const Matrix& w) {
    if (!ad.residual_init) return w;
    const SvdFactors f = jacobi_svd(w);
    return w - ad.scale * reconstruct(truncate(f, ad.r_in()));
}

Matrix effective_base(const LoraAdapter&, const Matrix& w) {
    return w;
}

Matrix merge(const LoraAdapter& ad, const Matrix& w) {
    require(w.rows() == ad.m() && w.cols() == ad.n(),
            "merge: weight " + shape_of(w) + " does not match adapter " +
                std::to_string(ad.m()) + "x" + std::to_string(ad.n()));
    return w + lora_delta(ad);
}

Matrix merge(const NoraAdapter& ad, const Matrix& w) {
    require(w.rows() == ad.m() && w.cols() == ad.n(),
            "merge: weight " + shape_of(w) + " does not match adapter " +
                std::to_string(ad.m()) + "x" + std::to_string(ad.n()));
    return effective_base(ad, w) + nora_delta(ad);
}

std::uint64_t trainable_param_count(const LoraAdapter& ad) {
    return static_cast<std::uint64_t>(ad.r()) * (ad.m() + ad.n());
}

std::uint64_t trainable_param_count(const NoraAdapter& ad) {
    return 2ULL * ad.r_out() * ad.r_in();
}

}  // namespace nora
