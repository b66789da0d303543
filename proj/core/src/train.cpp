// SPDX-License-Identifier: Apache-2.0
#include "nora/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <string>

#include "nora/error.hpp"
#include "nora/rng.hpp"

namespace nora {

namespace {

std::string shape_of(const Matrix& a) {
    return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

void check_config(const TrainConfig& cfg) {
    if (cfg.steps < 1) throw Error("train: steps must be >= 1");
    if (cfg.batch < 1) throw Error("train: batch must be >= 1");
    if (!(cfg.lr >= 0.0)) throw Error("train: lr must be >= 0");
    if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) ||
        !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0)) {
        throw Error("train: adam betas must lie in [0, 1)");
    }
    if (!(cfg.adam_eps > 0.0)) throw Error("train: adam_eps must be positive");
}

std::pair<double, Matrix> loss_of(LossKind kind, const Matrix& pred, const Matrix& target) {
    return kind == LossKind::mse ? mse_loss(pred, target)
                                 : cross_entropy_loss(pred, target);
}

Matrix columns_at(const Matrix& a, std::span<const std::size_t> idx) {
    Matrix out(a.rows(), idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = a(i, idx[j]);
    }
    return out;
}

struct LoraHooks {
    static std::pair<Matrix, ForwardCache> forward(const LoraAdapter& ad, const Matrix& w,
                                                   const Matrix& x) {
        return lora_forward(ad, w, x);
    }
    static std::vector<Matrix> gradients(const LoraAdapter& ad, const Matrix& w,
                                         const ForwardCache& cache, const Matrix& dh) {
        LoraGrads g = lora_backward(ad, w, cache, dh);
        return {std::move(g.da), std::move(g.db)};
    }
    static std::vector<Matrix*> trainable(LoraAdapter& ad) { return {&ad.a, &ad.b}; }
};

struct NoraHooks {
    static std::pair<Matrix, ForwardCache> forward(const NoraAdapter& ad, const Matrix& w,
                                                   const Matrix& x) {
        return nora_forward(ad, w, x);
    }
    static std::vector<Matrix> gradients(const NoraAdapter& ad, const Matrix& w,
                                         const ForwardCache& cache, const Matrix& dh) {
        NoraGrads g = nora_backward(ad, w, cache, dh);
        return {std::move(g.db_inner), std::move(g.da_inner)};
    }
    static std::vector<Matrix*> trainable(NoraAdapter& ad) {
        return {&ad.b_inner, &ad.a_inner};
    }
};

template <class Hooks, class Adapter>
TrainHistory train_impl(Adapter& ad, const ToyTask& task, const TrainConfig& cfg) {
    check_config(cfg);
    const std::size_t samples = task.inputs.cols();
    if (task.targets.cols() != samples || task.inputs.rows() != ad.n() ||
        task.targets.rows() != ad.m()) {
        throw ShapeError("train: task inputs " + shape_of(task.inputs) + " / targets " +
                         shape_of(task.targets) + " do not match adapter " +
                         std::to_string(ad.m()) + "x" + std::to_string(ad.n()));
    }
    if (cfg.batch > samples) {
        throw Error("train: batch " + std::to_string(cfg.batch) + " exceeds dataset size " +
                    std::to_string(samples));
    }

    const Matrix base = effective_base(ad, task.w_base);
    const Matrix targets =
        cfg.loss == LossKind::cross_entropy ? softmax_columns(task.targets) : task.targets;

    auto params = Hooks::trainable(ad);
    std::vector<AdamState> states;
    if (cfg.optimizer == Optimizer::adam) {
        states.reserve(params.size());
        for (Matrix* p : params) states.push_back(AdamState::like(*p));
    }

    Rng batch_rng(derived_seed(cfg.seed, 0x6261746368));  // "batch" stream

    TrainHistory history;
    history.losses.reserve(cfg.steps);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> idx(cfg.batch);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t& i : idx) i = batch_rng.index(samples);
        const Matrix x = columns_at(task.inputs, idx);
        const Matrix y = columns_at(targets, idx);

        auto [h, cache] = Hooks::forward(ad, base, x);
        auto [batch_loss, dh] = loss_of(cfg.loss, h, y);
        if (!std::isfinite(batch_loss)) {
            throw DivergenceError("train: loss diverged at step " + std::to_string(step),
                                  step);
        }
        const std::vector<Matrix> grads = Hooks::gradients(ad, base, cache, dh);
        for (std::size_t p = 0; p < params.size(); ++p) {
            if (cfg.optimizer == Optimizer::sgd) {
                sgd_step(*params[p], grads[p], cfg.lr);
            } else {
                adam_step(*params[p], grads[p], states[p], cfg);
            }
        }

        const double full_loss =
            loss_of(cfg.loss, Hooks::forward(ad, base, task.inputs).first, targets).first;
        if (!std::isfinite(full_loss)) {
            throw DivergenceError("train: loss diverged at step " + std::to_string(step),
                                  step);
        }
        history.losses.push_back(full_loss);
    }
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return history;
}

}  // namespace

std::pair<double, Matrix> mse_loss(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeError("mse_loss: shape mismatch " + shape_of(pred) + " vs " +
                         shape_of(target));
    }
    const double count = static_cast<double>(pred.size());
    double sum = 0.0;
    Matrix dpred(pred.rows(), pred.cols());
    auto p = pred.data();
    auto t = target.data();
    auto d = dpred.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double diff = p[i] - t[i];
        sum += diff * diff;
        d[i] = 2.0 * diff / count;
    }
    return {sum / count, std::move(dpred)};
}

Matrix softmax_columns(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double mx = a(0, j);
        for (std::size_t i = 1; i < a.rows(); ++i) mx = std::max(mx, a(i, j));
        double denom = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            out(i, j) = std::exp(a(i, j) - mx);
            denom += out(i, j);
        }
        for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) /= denom;
    }
    return out;
}

std::pair<double, Matrix> cross_entropy_loss(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ShapeError("cross_entropy_loss: shape mismatch " + shape_of(pred) + " vs " +
                         shape_of(target));
    }
    const double batch = static_cast<double>(pred.cols());
    double loss = 0.0;
    Matrix dpred = softmax_columns(pred);
    for (std::size_t j = 0; j < pred.cols(); ++j) {
        double mx = pred(0, j);
        for (std::size_t i = 1; i < pred.rows(); ++i) mx = std::max(mx, pred(i, j));
        double denom = 0.0;
        for (std::size_t i = 0; i < pred.rows(); ++i) denom += std::exp(pred(i, j) - mx);
        const double lse = mx + std::log(denom);
        for (std::size_t i = 0; i < pred.rows(); ++i) {
            loss += target(i, j) * (lse - pred(i, j));
        }
    }
    for (std::size_t i = 0; i < dpred.rows(); ++i) {
        for (std::size_t j = 0; j < dpred.cols(); ++j) {
            dpred(i, j) = (dpred(i, j) - target(i, j)) / batch;
        }
    }
    return {loss / batch, std::move(dpred)};
}

void sgd_step(Matrix& params, const Matrix& grads, double lr) {
    if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
        throw ShapeError("sgd_step: shape mismatch " + shape_of(params) + " vs " +
                         shape_of(grads));
    }
    auto p = params.data();
    auto g = grads.data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

void adam_step(Matrix& params, const Matrix& grads, AdamState& state,
               const TrainConfig& cfg) {
    if (params.rows() != grads.rows() || params.cols() != grads.cols() ||
        state.m.rows() != params.rows() || state.m.cols() != params.cols()) {
        throw ShapeError("adam_step: shape mismatch " + shape_of(params) + " vs " +
                         shape_of(grads));
    }
    state.t += 1;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    auto p = params.data();
    auto g = grads.data();
    auto m = state.m.data();
    auto v = state.v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double m_hat = m[i] / corr1;
        const double v_hat = v[i] / corr2;
        p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
}

ToyTask gen_lowrank_task(std::size_t m, std::size_t n, std::size_t rank_gap,
                         std::uint64_t seed, std::size_t samples, double noise_sigma) {
    if (m < 1 || n < 1 || samples < 1) {
        throw RankError("gen_lowrank_task: m, n and samples must be >= 1");
    }
    if (rank_gap > std::min(m, n)) {
        throw RankError("gen_lowrank_task: rank_gap " + std::to_string(rank_gap) +
                        " exceeds min(m, n) = " + std::to_string(std::min(m, n)));
    }
    ToyTask task;
    task.seed = seed;
    task.noise_sigma = noise_sigma;
    // Stream 0 is the plain seed so the base weight matches gen_matrix(m, n, seed).
    task.w_base = gen_matrix(m, n, seed);
    if (rank_gap > 0) {
        const Matrix p = gen_matrix(m, rank_gap, derived_seed(seed, 1));
        const Matrix q = gen_matrix(rank_gap, n, derived_seed(seed, 2));
        task.w_target = task.w_base + matmul(p, q);
    } else {
        task.w_target = task.w_base;
    }
    task.inputs = gen_matrix(n, samples, derived_seed(seed, 3));
    task.targets = matmul(task.w_target, task.inputs);
    if (noise_sigma > 0.0) {
        task.targets =
            task.targets + noise_sigma * gen_matrix(m, samples, derived_seed(seed, 4));
    }
    return task;
}

TrainHistory train_adapter(LoraAdapter& ad, const ToyTask& task, const TrainConfig& cfg) {
    return train_impl<LoraHooks>(ad, task, cfg);
}

TrainHistory train_adapter(NoraAdapter& ad, const ToyTask& task, const TrainConfig& cfg) {
    // Freeze contract: the outer factors must come back bit-identical.
    std::vector<double> u_snapshot(ad.u_r.data().begin(), ad.u_r.data().end());
    std::vector<double> vt_snapshot(ad.vt_r.data().begin(), ad.vt_r.data().end());
    TrainHistory history = train_impl<NoraHooks>(ad, task, cfg);
    const bool frozen =
        std::memcmp(u_snapshot.data(), ad.u_r.data().data(),
                    u_snapshot.size() * sizeof(double)) == 0 &&
        std::memcmp(vt_snapshot.data(), ad.vt_r.data().data(),
                    vt_snapshot.size() * sizeof(double)) == 0;
    if (!frozen) {
        throw std::logic_error("train_adapter: frozen outer factors were modified");
    }
    return history;
}

std::vector<Matrix> finite_diff_grad(const std::function<double()>& loss_fn,
                                     std::span<Matrix* const> params, double eps) {
    if (!(eps > 0.0)) throw Error("finite_diff_grad: eps must be positive");
    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (Matrix* p : params) {
        Matrix g(p->rows(), p->cols());
        auto values = p->data();
        auto out = g.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = loss_fn();
            values[i] = saved - eps;
            const double down = loss_fn();
            values[i] = saved;
            out[i] = (up - down) / (2.0 * eps);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double evaluate(const LoraAdapter& ad, const Matrix& w_base, const ToyTask& task,
                LossKind loss) {
    const Matrix targets =
        loss == LossKind::cross_entropy ? softmax_columns(task.targets) : task.targets;
    const Matrix pred = lora_forward(ad, w_base, task.inputs).first;
    return loss_of(loss, pred, targets).first;
}

double evaluate(const NoraAdapter& ad, const Matrix& w_base, const ToyTask& task,
                LossKind loss) {
    const Matrix targets =
        loss == LossKind::cross_entropy ? softmax_columns(task.targets) : task.targets;
    const Matrix base = effective_base(ad, w_base);
    const Matrix pred = nora_forward(ad, base, task.inputs).first;
    return loss_of(loss, pred, targets).first;
}

namespace {

double grad_disagreement(const Matrix& analytic, const Matrix& fd) {
    double worst = 0.0;
    auto a = analytic.data();
    auto b = fd.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

template <class Hooks, class Adapter>
double gradcheck_impl(const Adapter& ad_in, const Matrix& w, const Matrix& x,
                      const Matrix& target, double eps) {
    Adapter ad = ad_in;
    const auto loss_fn = [&]() {
        return mse_loss(Hooks::forward(ad, w, x).first, target).first;
    };
    auto [h, cache] = Hooks::forward(ad, w, x);
    auto [loss, dh] = mse_loss(h, target);
    (void)loss;
    const std::vector<Matrix> analytic = Hooks::gradients(ad, w, cache, dh);
    const std::vector<Matrix*> params = Hooks::trainable(ad);
    const std::vector<Matrix> fd =
        finite_diff_grad(loss_fn, std::span<Matrix* const>(params), eps);
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, grad_disagreement(analytic[i], fd[i]));
    }
    return worst;
}

}  // namespace

double gradcheck_max_rel_error(const LoraAdapter& ad, const Matrix& w, const Matrix& x,
                               const Matrix& target, double eps) {
    return gradcheck_impl<LoraHooks>(ad, w, x, target, eps);
}

double gradcheck_max_rel_error(const NoraAdapter& ad, const Matrix& w, const Matrix& x,
                               const Matrix& target, double eps) {
    return gradcheck_impl<NoraHooks>(ad, w, x, target, eps);
}

}  // namespace nora
