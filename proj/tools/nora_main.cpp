// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface for the adapter library: init / train / gradcheck /
// budget / merge / inspect. All stdout is deterministic for fixed inputs;
// wall-clock time is confined to the run manifest. Exit codes: 0 success,
// 1 domain error, 2 usage error.

#include <cstdio>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nora/adapter.hpp"
#include "nora/budget.hpp"
#include "nora/error.hpp"
#include "nora/io.hpp"
#include "nora/matrix.hpp"
#include "nora/svd.hpp"
#include "nora/train.hpp"
#include "nora/version.hpp"

namespace {

using nora::Matrix;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Weight inputs are either a kind-255 matrix file or "gen:MxN:SEED".
Matrix load_weight(const std::string& spec) {
    if (spec.rfind("gen:", 0) == 0) {
        unsigned long long m = 0, n = 0, seed = 0;
        char tail = 0;
        if (std::sscanf(spec.c_str(), "gen:%llux%llu:%llu%c", &m, &n, &seed, &tail) != 3 ||
            m == 0 || n == 0) {
            throw nora::UsageError("bad weight spec '" + spec + "', expected gen:MxN:SEED");
        }
        return nora::gen_matrix(m, n, seed);
    }
    return nora::load_matrix(spec);
}

nora::ToyTask load_task(const std::string& spec) {
    unsigned long long m = 0, n = 0, gap = 0, seed = 0;
    double noise = 0.0;
    char tail = 0;
    const int with_noise =
        std::sscanf(spec.c_str(), "lowrank:%llu:%llu:%llu:%llu:%lf%c", &m, &n, &gap,
                    &seed, &noise, &tail);
    if (with_noise == 5) {
        return nora::gen_lowrank_task(m, n, gap, seed, 64, noise);
    }
    if (std::sscanf(spec.c_str(), "lowrank:%llu:%llu:%llu:%llu%c", &m, &n, &gap, &seed,
                    &tail) == 4 &&
        m > 0 && n > 0) {
        return nora::gen_lowrank_task(m, n, gap, seed);
    }
    throw nora::UsageError("bad task spec '" + spec +
                           "', expected lowrank:M:N:GAP:SEED[:NOISE]");
}

struct InitArgs {
    std::string weight;
    std::size_t r_out = 0;
    std::size_t r_in = 0;
    bool residual = false;
    double scale = 1.0;
    std::string output;
    bool json = false;
};

int run_init(const InitArgs& args) {
    const Matrix w = load_weight(args.weight);
    const nora::NoraAdapter ad =
        nora::nora_init(w, args.r_out, args.r_in, args.scale, args.residual);
    nora::save_adapter(ad, args.output);
    if (args.json) {
        nlohmann::json out = {
            {"kind", "nora"},           {"m", ad.m()},
            {"n", ad.n()},              {"r_out", ad.r_out()},
            {"r_in", ad.r_in()},        {"scale", ad.scale},
            {"residual", ad.residual_init}, {"trainable_params", nora::trainable_param_count(ad)},
            {"output", args.output},
        };
        std::printf("%s\n", out.dump(2).c_str());
    } else {
        std::printf("initialized nora adapter %zux%zu r_out=%zu r_in=%zu scale=%s%s\n",
                    ad.m(), ad.n(), ad.r_out(), ad.r_in(), fmt(ad.scale).c_str(),
                    ad.residual_init ? " (residual)" : "");
        std::printf("trainable params: %llu\n",
                    static_cast<unsigned long long>(nora::trainable_param_count(ad)));
        std::printf("wrote %s\n", args.output.c_str());
    }
    return 0;
}

struct TrainArgs {
    std::string adapter;
    std::string task;
    nora::TrainConfig cfg;
    std::string opt_name = "adam";
    std::string loss_name = "mse";
    std::string output;
    std::string history;
    std::string manifest;
    bool json = false;
};

int run_train(TrainArgs& args) {
    args.cfg.optimizer =
        args.opt_name == "sgd" ? nora::Optimizer::sgd : nora::Optimizer::adam;
    args.cfg.loss = args.loss_name == "cross_entropy" ? nora::LossKind::cross_entropy
                                                      : nora::LossKind::mse;
    const nora::ToyTask task = load_task(args.task);
    nora::AnyAdapter any = nora::load_adapter(args.adapter);

    nora::TrainHistory history = std::visit(
        [&](auto& ad) { return nora::train_adapter(ad, task, args.cfg); }, any);
    std::visit([&](const auto& ad) { nora::save_adapter(ad, args.output); }, any);

    if (!args.history.empty()) nora::export_history(history, args.history);
    const std::string manifest_path =
        args.manifest.empty() ? args.output + ".manifest.json" : args.manifest;
    nora::write_run_manifest(manifest_path, args.cfg, args.task, args.adapter,
                             args.output, args.history, history.wall_seconds);

    const double initial = history.losses.front();
    const double final_loss = history.losses.back();
    if (args.json) {
        nlohmann::json out = {
            {"steps", history.losses.size()},
            {"initial_loss", initial},
            {"final_loss", final_loss},
            {"adapter_out", args.output},
            {"manifest", manifest_path},
        };
        if (!args.history.empty()) out["history"] = args.history;
        std::printf("%s\n", out.dump(2).c_str());
    } else {
        std::printf("trained %zu steps: loss %s -> %s\n", history.losses.size(),
                    fmt(initial).c_str(), fmt(final_loss).c_str());
        std::printf("wrote %s\n", args.output.c_str());
        if (!args.history.empty()) std::printf("wrote %s\n", args.history.c_str());
        std::printf("wrote %s\n", manifest_path.c_str());
    }
    return 0;
}

struct GradcheckArgs {
    std::string adapter;
    double eps = 1e-5;
    bool json = false;
};

int run_gradcheck(const GradcheckArgs& args) {
    const nora::AnyAdapter any = nora::load_adapter(args.adapter);
    const double worst = std::visit(
        [&](const auto& ad) {
            const Matrix w = nora::gen_matrix(ad.m(), ad.n(), 0xC0FFEE);
            const Matrix x = nora::gen_matrix(ad.n(), 4, 0xBEEF);
            const Matrix target = nora::gen_matrix(ad.m(), 4, 0xFEED);
            return nora::gradcheck_max_rel_error(ad, w, x, target, args.eps);
        },
        any);
    const bool pass = worst < 1e-5;
    if (args.json) {
        nlohmann::json out = {{"max_rel_error", worst}, {"eps", args.eps}, {"pass", pass}};
        std::printf("%s\n", out.dump(2).c_str());
    } else {
        std::printf("max relative error: %s\n", fmt(worst).c_str());
    }
    return pass ? 0 : 1;
}

struct BudgetArgs {
    nora::BudgetSpec spec;
    bool csv = false;
    bool json = false;
};

int run_budget(const BudgetArgs& args) {
    const std::vector<std::pair<std::string, nora::BudgetSpec>> specs{{"spec", args.spec}};
    const nora::BudgetReport report = nora::budget_report(specs);
    if (args.json) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : report.rows) {
            rows.push_back({{"name", row.name},
                            {"lora_params", row.lora},
                            {"nora_params", row.nora},
                            {"lora_human", nora::format_param_count(row.lora)},
                            {"nora_human", nora::format_param_count(row.nora)},
                            {"ratio", row.ratio},
                            {"approx_ratio", row.approx_ratio}});
        }
        nlohmann::json out = {{"rows", rows}, {"assumptions", report.assumptions}};
        std::printf("%s\n", out.dump(2).c_str());
    } else if (args.csv) {
        std::fputs(nora::render_csv(report).c_str(), stdout);
    } else {
        std::fputs(nora::render_text(report).c_str(), stdout);
    }
    return 0;
}

struct MergeArgs {
    std::string adapter;
    std::string weight;
    std::string output;
    bool json = false;
};

int run_merge(const MergeArgs& args) {
    const nora::AnyAdapter any = nora::load_adapter(args.adapter);
    const Matrix w = load_weight(args.weight);
    const Matrix merged =
        std::visit([&](const auto& ad) { return nora::merge(ad, w); }, any);
    nora::save_matrix(merged, args.output);
    if (args.json) {
        nlohmann::json out = {{"rows", merged.rows()},
                              {"cols", merged.cols()},
                              {"output", args.output}};
        std::printf("%s\n", out.dump(2).c_str());
    } else {
        std::printf("merged %zux%zu weight -> %s\n", merged.rows(), merged.cols(),
                    args.output.c_str());
    }
    return 0;
}

struct InspectArgs {
    std::string adapter;
    bool json = false;
};

int run_inspect(const InspectArgs& args) {
    const nora::AnyAdapter any = nora::load_adapter(args.adapter);
    const bool is_lora = std::holds_alternative<nora::LoraAdapter>(any);
    const Matrix delta = std::visit(
        [](const auto& ad) {
            if constexpr (std::is_same_v<std::decay_t<decltype(ad)>, nora::LoraAdapter>) {
                return nora::lora_delta(ad);
            } else {
                return nora::nora_delta(ad);
            }
        },
        any);
    const auto f = nora::jacobi_svd(delta);

    if (args.json) {
        nlohmann::json out;
        std::visit(
            [&](const auto& ad) {
                out["m"] = ad.m();
                out["n"] = ad.n();
                out["scale"] = ad.scale;
                out["trainable_params"] = nora::trainable_param_count(ad);
            },
            any);
        if (is_lora) {
            out["kind"] = "lora";
            out["r"] = std::get<nora::LoraAdapter>(any).r();
        } else {
            const auto& ad = std::get<nora::NoraAdapter>(any);
            out["kind"] = "nora";
            out["r_out"] = ad.r_out();
            out["r_in"] = ad.r_in();
            out["residual"] = ad.residual_init;
        }
        out["delta_singular_values"] = f.sigma;
        std::printf("%s\n", out.dump(2).c_str());
        return 0;
    }

    if (is_lora) {
        const auto& ad = std::get<nora::LoraAdapter>(any);
        std::printf("kind: lora\ndims: %zux%zu (r=%zu)\nscale: %s\n", ad.m(), ad.n(),
                    ad.r(), fmt(ad.scale).c_str());
        std::printf("trainable params: %llu\n",
                    static_cast<unsigned long long>(nora::trainable_param_count(ad)));
    } else {
        const auto& ad = std::get<nora::NoraAdapter>(any);
        std::printf("kind: nora\ndims: %zux%zu (r_out=%zu, r_in=%zu)\nscale: %s\n",
                    ad.m(), ad.n(), ad.r_out(), ad.r_in(), fmt(ad.scale).c_str());
        std::printf("residual_init: %s\n", ad.residual_init ? "true" : "false");
        std::printf("trainable params: %llu\n",
                    static_cast<unsigned long long>(nora::trainable_param_count(ad)));
    }
    std::printf("delta singular values:");
    for (double s : f.sigma) std::printf(" %s", fmt(s).c_str());
    std::printf("\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-rank and nested low-rank adapter toolbox"};
    app.set_version_flag("--version", nora::k_version);
    app.require_subcommand(1);

    InitArgs init_args;
    CLI::App* init = app.add_subcommand("init", "SVD-initialize a nested adapter");
    init->add_option("--weight", init_args.weight, "matrix file or gen:MxN:SEED")->required();
    init->add_option("--r-out", init_args.r_out, "outer rank")->required();
    init->add_option("--r-in", init_args.r_in, "inner rank")->required();
    init->add_flag("--residual", init_args.residual,
                   "record that the base should be residualized to preserve the "
                   "function at init");
    init->add_option("--scale", init_args.scale, "delta-path scale (default 1.0)");
    init->add_option("-o,--output", init_args.output, "adapter file to write")->required();
    init->add_flag("--json", init_args.json, "machine-readable output");

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train an adapter on a synthetic task");
    train->add_option("--adapter", train_args.adapter, "adapter file")->required();
    train->add_option("--task", train_args.task, "lowrank:M:N:GAP:SEED[:NOISE]")->required();
    train->add_option("--steps", train_args.cfg.steps, "optimizer steps");
    train->add_option("--lr", train_args.cfg.lr, "learning rate");
    train->add_option("--opt", train_args.opt_name, "optimizer: sgd or adam")
        ->check(CLI::IsMember({"sgd", "adam"}));
    train->add_option("--batch", train_args.cfg.batch, "minibatch size");
    train->add_option("--seed", train_args.cfg.seed, "batch-sampling seed");
    train->add_option("--loss", train_args.loss_name, "loss: mse or cross_entropy")
        ->check(CLI::IsMember({"mse", "cross_entropy"}));
    train->add_option("-o,--output", train_args.output, "updated adapter file")->required();
    train->add_option("--history", train_args.history, "loss history CSV");
    train->add_option("--manifest", train_args.manifest,
                      "run manifest path (default: <output>.manifest.json)");
    train->add_flag("--json", train_args.json, "machine-readable output");

    GradcheckArgs grad_args;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
    gradcheck->add_option("--adapter", grad_args.adapter, "adapter file")->required();
    gradcheck->add_option("--eps", grad_args.eps, "central-difference step");
    gradcheck->add_flag("--json", grad_args.json, "machine-readable output");

    BudgetArgs budget_args;
    CLI::App* budget = app.add_subcommand("budget", "trainable-parameter accounting");
    budget->add_option("--layers", budget_args.spec.layers, "finetuned layers L")->required();
    budget->add_option("--per-layer", budget_args.spec.matrices_per_layer,
                       "adapted matrices per layer q")->required();
    budget->add_option("--hidden", budget_args.spec.hidden, "hidden size n")->required();
    budget->add_option("--lora-rank", budget_args.spec.lora_rank, "baseline rank r")->required();
    budget->add_option("--r-out", budget_args.spec.outer_rank, "outer rank")->required();
    budget->add_option("--r-in", budget_args.spec.inner_rank, "inner rank")->required();
    budget->add_option("--rect-m", budget_args.spec.rect_m,
                       "optional m for rectangular m x n weights");
    budget->add_flag("--csv", budget_args.csv, "CSV output");
    budget->add_flag("--json", budget_args.json, "machine-readable output");

    MergeArgs merge_args;
    CLI::App* merge = app.add_subcommand("merge", "fold an adapter into its weight");
    merge->add_option("--adapter", merge_args.adapter, "adapter file")->required();
    merge->add_option("--weight", merge_args.weight, "matrix file or gen:MxN:SEED")->required();
    merge->add_option("-o,--output", merge_args.output, "merged matrix file")->required();
    merge->add_flag("--json", merge_args.json, "machine-readable output");

    InspectArgs inspect_args;
    CLI::App* inspect = app.add_subcommand("inspect", "describe an adapter file");
    inspect->add_option("--adapter", inspect_args.adapter, "adapter file")->required();
    inspect->add_flag("--json", inspect_args.json, "machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        if (init->parsed()) return run_init(init_args);
        if (train->parsed()) return run_train(train_args);
        if (gradcheck->parsed()) return run_gradcheck(grad_args);
        if (budget->parsed()) return run_budget(budget_args);
        if (merge->parsed()) return run_merge(merge_args);
        if (inspect->parsed()) return run_inspect(inspect_args);
    } catch (const nora::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
