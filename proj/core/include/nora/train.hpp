// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "nora/adapter.hpp"
#include "nora/matrix.hpp"

namespace nora {

enum class Optimizer : std::uint8_t { sgd = 0, adam = 1 };
enum class LossKind : std::uint8_t { mse = 0, cross_entropy = 1 };

struct TrainConfig {
    std::size_t steps = 500;
    std::size_t batch = 4;
    double lr = 1e-2;
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::mse;
};

/// Synthetic teacher task. targets = w_target * inputs (+ Gaussian noise of
/// stddev noise_sigma when requested), so the optimal weight delta is known
/// by construction.
struct ToyTask {
    Matrix w_base;    // m x n, the frozen pre-trained weight
    Matrix w_target;  // m x n, the teacher
    Matrix inputs;    // n x N
    Matrix targets;   // m x N
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> losses;  // full-dataset loss after each step
    double wall_seconds = 0.0;
};

/// Mean squared error over all entries; dpred = 2 * (pred - target) / count.
std::pair<double, Matrix> mse_loss(const Matrix& pred, const Matrix& target);

/// Column-wise softmax cross entropy against target probability columns,
/// averaged over the batch; dpred = (softmax(pred) - target) / batch.
std::pair<double, Matrix> cross_entropy_loss(const Matrix& pred, const Matrix& target);

/// Column-wise softmax (used to turn teacher logits into distributions).
Matrix softmax_columns(const Matrix& a);

void sgd_step(Matrix& params, const Matrix& grads, double lr);

struct AdamState {
    Matrix m;  // first moment
    Matrix v;  // second moment
    std::size_t t = 0;

    static AdamState like(const Matrix& params) {
        return {Matrix(params.rows(), params.cols()), Matrix(params.rows(), params.cols()), 0};
    }
};

/// Bias-corrected Adam update. Deterministic given inputs.
void adam_step(Matrix& params, const Matrix& grads, AdamState& state,
               const TrainConfig& cfg);

/// w_base random, w_target = w_base + P*Q with P (m x rank_gap) and
/// Q (rank_gap x n) random: the required delta has exactly rank rank_gap.
ToyTask gen_lowrank_task(std::size_t m, std::size_t n, std::size_t rank_gap,
                         std::uint64_t seed, std::size_t samples = 64,
                         double noise_sigma = 0.0);

/// Minibatch optimization of the adapter's trainable fields only. NoRA
/// outer factors are verified bit-identical at exit. Loss history holds the
/// full-dataset loss after each step. Throws DivergenceError (with the step
/// index) if the loss leaves the finite range.
TrainHistory train_adapter(LoraAdapter& ad, const ToyTask& task, const TrainConfig& cfg);
TrainHistory train_adapter(NoraAdapter& ad, const ToyTask& task, const TrainConfig& cfg);

/// Central differences (f(p+eps) - f(p-eps)) / 2eps per scalar parameter.
/// loss_fn must be pure in the pointed-to parameters; they are restored
/// bit-exactly afterwards.
std::vector<Matrix> finite_diff_grad(const std::function<double()>& loss_fn,
                                     std::span<Matrix* const> params,
                                     double eps = 1e-5);

/// Full-dataset loss with no parameter mutation.
double evaluate(const LoraAdapter& ad, const Matrix& w_base, const ToyTask& task,
                LossKind loss = LossKind::mse);
double evaluate(const NoraAdapter& ad, const Matrix& w_base, const ToyTask& task,
                LossKind loss = LossKind::mse);

/// Largest disagreement between the analytic backward pass and the central
/// finite-difference oracle over every trainable entry, for a squared-error
/// loss against `target` on probe input `x`. Disagreement is measured as
/// |a - fd| / max(|a|, |fd|, 1), which behaves like a relative error for
/// gradients of ordinary size and like an absolute one near zero.
double gradcheck_max_rel_error(const LoraAdapter& ad, const Matrix& w, const Matrix& x,
                               const Matrix& target, double eps = 1e-5);
double gradcheck_max_rel_error(const NoraAdapter& ad, const Matrix& w, const Matrix& x,
                               const Matrix& target, double eps = 1e-5);

}  // namespace nora
