// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, exit 0 only if all
// pass. Usage: acceptance <path-to-cli> <fixtures-dir>
//
// Every threshold, seed and optimizer budget is pinned here; the committed
// budgets were fixed once by oracle runs and must not be retuned to make a
// failing criterion pass.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "nora/adapter.hpp"
#include "nora/budget.hpp"
#include "nora/error.hpp"
#include "nora/io.hpp"
#include "nora/matrix.hpp"
#include "nora/rng.hpp"
#include "nora/svd.hpp"
#include "nora/train.hpp"

using nora::Matrix;

namespace {

std::string g_cli;
std::filesystem::path g_fixtures;
std::filesystem::path g_workdir;

// ---------------------------------------------------------------- helpers

std::uint64_t matrix_hash(const Matrix& m) {
    return nora::fnv1a(std::span(reinterpret_cast<const unsigned char*>(m.data().data()),
                                 m.data().size() * sizeof(double)));
}

double ortho_defect(const nora::SvdFactors& f) {
    const std::size_t k = f.sigma.size();
    const Matrix du = nora::matmul(nora::transpose(f.u), f.u) - Matrix::identity(k);
    const Matrix dv = nora::matmul(f.vt, nora::transpose(f.vt)) - Matrix::identity(k);
    return std::max(nora::frobenius_norm(du), nora::frobenius_norm(dv));
}

Matrix plane_rotation(std::size_t n, std::size_t i, std::size_t j, double theta) {
    Matrix g = Matrix::identity(n);
    g(i, i) = std::cos(theta);
    g(j, j) = std::cos(theta);
    g(i, j) = -std::sin(theta);
    g(j, i) = std::sin(theta);
    return g;
}

struct CommandResult {
    int exit_code = -1;
    std::string out;
};

CommandResult run_cli(const std::string& args) {
    const std::string cmd = g_cli + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    CommandResult result;
    if (!pipe) return result;
    std::array<char, 4096> buf;
    std::size_t got;
    while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        result.out.append(buf.data(), got);
    }
    result.exit_code = WEXITSTATUS(pclose(pipe));
    return result;
}

bool check(bool ok, const std::string& what, std::string& detail) {
    if (!ok && detail.empty()) detail = what;
    return ok;
}

// ------------------------------------------------------------- criterion 1

// 200 random matrices (2x2 .. 64x48, rank-deficient and repeated-sigma cases
// included): reconstruction relative error < 1e-9, orthonormality defect
// < 1e-10.
bool criterion_svd_fidelity(std::string& detail) {
    nora::Rng rng(0xACC1);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t m = 2 + rng.index(63);   // 2..64
        const std::size_t n = 2 + rng.index(47);   // 2..48
        Matrix a(m, n);
        switch (rep % 5) {
            case 0:
            case 1:
            case 2:
                a = nora::random_matrix(m, n, rng);
                break;
            case 3: {  // rank-deficient product
                const std::size_t r = 1 + rng.index(std::min(m, n));
                a = nora::matmul(nora::random_matrix(m, r, rng),
                                 nora::random_matrix(r, n, rng));
                break;
            }
            case 4: {  // repeated singular values via exact rotations
                const std::size_t k = std::min(m, n);
                Matrix d(m, n);
                const double v = 1.0 + rng.uniform() * 4.0;
                for (std::size_t i = 0; i < k; ++i) d(i, i) = (i < (k + 1) / 2) ? v : 1.0;
                Matrix gl = plane_rotation(m, 0, m - 1, rng.uniform() * 3.0);
                Matrix gr = plane_rotation(n, 0, n - 1, rng.uniform() * 3.0);
                if (m > 2) gl = nora::matmul(gl, plane_rotation(m, 1, m / 2, rng.uniform()));
                if (n > 2) gr = nora::matmul(gr, plane_rotation(n, 1, n / 2, rng.uniform()));
                a = nora::matmul(gl, nora::matmul(d, nora::transpose(gr)));
                break;
            }
        }
        const auto f = nora::jacobi_svd(a);
        const double rel = nora::frobenius_norm(a - nora::reconstruct(f)) /
                           std::max(nora::frobenius_norm(a), 1e-30);
        if (!check(rel < 1e-9, "reconstruction error " + std::to_string(rel) + " at rep " +
                                   std::to_string(rep), detail)) {
            return false;
        }
        const double defect = ortho_defect(f);
        if (!check(defect < 1e-10, "orthonormality defect " + std::to_string(defect) +
                                       " at rep " + std::to_string(rep), detail)) {
            return false;
        }
    }
    // The all-zero matrix is a required degenerate case.
    const auto fz = nora::jacobi_svd(Matrix(8, 5));
    return check(ortho_defect(fz) < 1e-10 && nora::frobenius_norm(nora::reconstruct(fz)) == 0.0,
                 "zero-matrix factors", detail);
}

// ------------------------------------------------------------- criterion 2

// 50 random W with sampled ranks: the init delta equals the independent
// truncate/reconstruct oracle within 1e-9.
bool criterion_init_identity(std::string& detail) {
    nora::Rng rng(0xACC2);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t m = 3 + rng.index(28);
        const std::size_t n = 3 + rng.index(20);
        const std::size_t cap = std::min(m, n);
        const std::size_t r_out = 1 + rng.index(cap);
        const std::size_t r_in = 1 + rng.index(r_out);
        const Matrix w = nora::random_matrix(m, n, rng);
        const nora::NoraAdapter ad = nora::nora_init(w, r_out, r_in, 1.0);
        const Matrix oracle = nora::reconstruct(nora::truncate(nora::jacobi_svd(w), r_in));
        const double err = nora::frobenius_norm(nora::nora_delta(ad) - oracle);
        if (!check(err < 1e-9, "init delta error " + std::to_string(err) + " at rep " +
                                   std::to_string(rep), detail)) {
            return false;
        }
    }
    return true;
}

// ------------------------------------------------------------- criterion 3

// >= 20 random NoRA and 20 random LoRA instances: analytic backward agrees
// with central finite differences (eps = 1e-5) to better than 1e-5.
bool criterion_gradients(std::string& detail) {
    nora::Rng rng(0xACC3);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t m = 4 + rng.index(12);
        const std::size_t n = 4 + rng.index(10);
        const std::size_t cap = std::min(m, n);
        const std::size_t batch = 1 + rng.index(5);
        const Matrix w = nora::random_matrix(m, n, rng);
        const Matrix x = nora::random_matrix(n, batch, rng);
        const Matrix target = nora::random_matrix(m, batch, rng);

        const std::size_t r_out = 1 + rng.index(cap);
        const std::size_t r_in = 1 + rng.index(r_out);
        nora::NoraAdapter nad = nora::nora_init(w, r_out, r_in, 0.25 + rng.uniform());
        nad.b_inner = nad.b_inner + nora::random_matrix(r_out, r_in, rng, 0.3);
        nad.a_inner = nad.a_inner + nora::random_matrix(r_in, r_out, rng, 0.3);
        const double nora_err = nora::gradcheck_max_rel_error(nad, w, x, target, 1e-5);
        if (!check(nora_err < 1e-5, "nora gradient error " + std::to_string(nora_err) +
                                        " at rep " + std::to_string(rep), detail)) {
            return false;
        }

        const std::size_t r = 1 + rng.index(cap);
        nora::LoraAdapter lad = nora::lora_init(m, n, r, rng.next_u64(), 0.25 + rng.uniform());
        lad.b = nora::random_matrix(m, r, rng, 0.5);
        const double lora_err = nora::gradcheck_max_rel_error(lad, w, x, target, 1e-5);
        if (!check(lora_err < 1e-5, "lora gradient error " + std::to_string(lora_err) +
                                        " at rep " + std::to_string(rep), detail)) {
            return false;
        }
    }
    return true;
}

// ------------------------------------------------------------- criterion 4

// Byte-hash of (U_r, V_r^T) unchanged across a 500-step training run.
bool criterion_freeze(std::string& detail) {
    const nora::ToyTask task = nora::gen_lowrank_task(32, 24, 2, 0xACC4);
    nora::NoraAdapter ad = nora::nora_init(task.w_base, 8, 2);
    const std::uint64_t u_hash = matrix_hash(ad.u_r);
    const std::uint64_t vt_hash = matrix_hash(ad.vt_r);
    nora::TrainConfig cfg;
    cfg.steps = 500;
    cfg.lr = 1e-2;
    cfg.seed = 4;
    nora::train_adapter(ad, task, cfg);
    return check(matrix_hash(ad.u_r) == u_hash && matrix_hash(ad.vt_r) == vt_hash,
                 "outer-factor hash changed", detail);
}

// ------------------------------------------------------------- criterion 5

// 1000 random budget specs: exact integer identities of the count formulas.
bool criterion_budget_formulas(std::string& detail) {
    nora::Rng rng(0xACC5);
    for (int rep = 0; rep < 1000; ++rep) {
        nora::BudgetSpec s;
        s.layers = 1 + rng.index(64);
        s.matrices_per_layer = 1 + rng.index(8);
        s.hidden = 2 + rng.index(8190);
        s.outer_rank = 1 + rng.index(std::min<std::uint64_t>(s.hidden, 256));
        s.inner_rank = 1 + rng.index(s.outer_rank);
        s.lora_rank = 1 + rng.index(std::min<std::uint64_t>(s.hidden, 128));

        const std::uint64_t lora = nora::lora_params(s);
        const std::uint64_t nrp = nora::nora_params(s);
        const bool ok =
            lora == s.layers * s.matrices_per_layer * s.lora_rank * 2 * s.hidden &&
            nrp == 2 * s.layers * s.matrices_per_layer * s.outer_rank * s.inner_rank &&
            lora * (s.outer_rank * s.inner_rank) == nrp * (s.lora_rank * s.hidden);
        if (!check(ok, "integer identity failed at rep " + std::to_string(rep), detail)) {
            return false;
        }
        if (s.lora_rank == s.inner_rank) {
            const double ratio = nora::efficiency_ratio(s);
            const double reduced =
                static_cast<double>(s.hidden) / static_cast<double>(s.outer_rank);
            if (!check(ratio == reduced, "n/r_out reduction failed at rep " +
                                             std::to_string(rep), detail)) {
                return false;
            }
        }
    }
    return true;
}

// ------------------------------------------------------------- criterion 6

// Summed per-adapter counts equal the budget formula for 50 random specs.
bool criterion_count_agreement(std::string& detail) {
    nora::Rng rng(0xACC6);
    for (int rep = 0; rep < 50; ++rep) {
        nora::BudgetSpec s;
        s.layers = 1 + rng.index(3);
        s.matrices_per_layer = 1 + rng.index(3);
        s.hidden = 6 + rng.index(14);
        s.outer_rank = 1 + rng.index(s.hidden);
        s.inner_rank = 1 + rng.index(s.outer_rank);
        s.lora_rank = 1 + rng.index(s.hidden);
        std::uint64_t sum = 0;
        for (std::uint64_t i = 0; i < s.layers * s.matrices_per_layer; ++i) {
            const Matrix w = nora::random_matrix(s.hidden, s.hidden, rng);
            sum += nora::trainable_param_count(
                nora::nora_init(w, s.outer_rank, s.inner_rank));
        }
        if (!check(sum == nora::nora_params(s),
                   "count mismatch at rep " + std::to_string(rep), detail)) {
            return false;
        }
    }
    return true;
}

// ------------------------------------------------------------- criterion 7

// Merged-weight forward equals the adapted forward within 1e-10 infinity
// norm over 32 random probes, both kinds, before and after training.
bool criterion_merge(std::string& detail) {
    const nora::ToyTask task = nora::gen_lowrank_task(16, 12, 2, 0xACC7);
    nora::TrainConfig cfg;
    cfg.steps = 100;
    cfg.lr = 1e-2;
    cfg.seed = 7;

    nora::NoraAdapter nad = nora::nora_init(task.w_base, 6, 2);
    nora::LoraAdapter lad = nora::lora_init(16, 12, 2, 0xACC7'01);

    const auto probe_nora = [&](const nora::NoraAdapter& ad, const char* tag) {
        const Matrix merged = nora::merge(ad, task.w_base);
        nora::Rng rng(0xACC7'02);
        for (int rep = 0; rep < 32; ++rep) {
            const Matrix x = nora::random_matrix(12, 1, rng);
            const double diff = nora::max_abs_diff(
                nora::matmul(merged, x), nora::nora_forward(ad, task.w_base, x).first);
            if (diff >= 1e-10) {
                detail = std::string(tag) + " nora merge diff " + std::to_string(diff);
                return false;
            }
        }
        return true;
    };
    const auto probe_lora = [&](const nora::LoraAdapter& ad, const char* tag) {
        const Matrix merged = nora::merge(ad, task.w_base);
        nora::Rng rng(0xACC7'03);
        for (int rep = 0; rep < 32; ++rep) {
            const Matrix x = nora::random_matrix(12, 1, rng);
            const double diff = nora::max_abs_diff(
                nora::matmul(merged, x), nora::lora_forward(ad, task.w_base, x).first);
            if (diff >= 1e-10) {
                detail = std::string(tag) + " lora merge diff " + std::to_string(diff);
                return false;
            }
        }
        return true;
    };

    if (!probe_nora(nad, "pre-train") || !probe_lora(lad, "pre-train")) return false;
    nora::train_adapter(nad, task, cfg);
    nora::train_adapter(lad, task, cfg);
    return probe_nora(nad, "post-train") && probe_lora(lad, "post-train");
}

// ------------------------------------------------------------- criterion 8

// Desk-scale capacity/efficiency property on committed seeds: with the
// committed 20-step adam budget, residual-initialized NoRA(8, gap) lands
// within 1.1x of LoRA(gap) while training fewer parameters. (Budget fixed
// once by the oracle run: max observed ratio 1.064; at long horizons LoRA's
// fully trainable factors pull far ahead, so the matched budget is part of
// the committed setup.)
bool criterion_capacity_efficiency(std::string& detail) {
    const std::array<std::uint64_t, 3> seeds{101, 202, 404};
    const std::array<std::size_t, 3> gaps{1, 2, 4};
    nora::TrainConfig cfg;
    cfg.steps = 20;
    cfg.lr = 1e-2;
    cfg.optimizer = nora::Optimizer::adam;
    cfg.seed = 7;

    for (const std::uint64_t seed : seeds) {
        for (const std::size_t gap : gaps) {
            const nora::ToyTask task = nora::gen_lowrank_task(32, 24, gap, seed);

            nora::NoraAdapter nad = nora::nora_init(task.w_base, 8, gap, 1.0, true);
            nora::LoraAdapter lad = nora::lora_init(32, 24, gap, 12345);
            const double nora_final = nora::train_adapter(nad, task, cfg).losses.back();
            const double lora_final = nora::train_adapter(lad, task, cfg).losses.back();

            if (!check(nora_final <= 1.1 * lora_final,
                       "seed " + std::to_string(seed) + " gap " + std::to_string(gap) +
                           ": nora " + std::to_string(nora_final) + " vs lora " +
                           std::to_string(lora_final), detail)) {
                return false;
            }

            // Fewer trainable parameters, cross-checked against the budget module.
            nora::BudgetSpec spec;
            spec.hidden = 24;
            spec.rect_m = 32;
            spec.lora_rank = gap;
            spec.outer_rank = 8;
            spec.inner_rank = gap;
            const bool counts_ok =
                nora::trainable_param_count(nad) == nora::nora_params(spec) &&
                nora::trainable_param_count(lad) == nora::lora_params(spec) &&
                nora::trainable_param_count(nad) < nora::trainable_param_count(lad);
            if (!check(counts_ok, "parameter-count cross-check failed", detail)) {
                return false;
            }
        }
    }
    return true;
}

// ------------------------------------------------------------- criterion 9

// 100 random adapters round-trip bit-identically; 200 single-byte flips are
// rejected (corruption/format error), never partially loaded.
bool criterion_serialization(std::string& detail) {
    const std::string path = (g_workdir / "roundtrip.nora").string();
    nora::Rng rng(0xACC9);
    std::vector<std::string> kept_files;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t m = 2 + rng.index(12);
        const std::size_t n = 2 + rng.index(12);
        const std::size_t cap = std::min(m, n);
        if (rep % 2 == 0) {
            const std::size_t r = 1 + rng.index(cap);
            nora::LoraAdapter ad = nora::lora_init(m, n, r, rng.next_u64(), rng.uniform() + 0.1);
            ad.b = nora::random_matrix(m, r, rng, 0.7);
            nora::save_adapter(ad, path);
            const auto loaded = std::get<nora::LoraAdapter>(nora::load_adapter(path));
            if (!check(loaded == ad, "lora round-trip mismatch at rep " + std::to_string(rep),
                       detail)) {
                return false;
            }
        } else {
            const std::size_t r_out = 1 + rng.index(cap);
            const std::size_t r_in = 1 + rng.index(r_out);
            nora::NoraAdapter ad = nora::nora_init(nora::random_matrix(m, n, rng), r_out,
                                                   r_in, rng.uniform() + 0.1, rep % 4 == 1);
            ad.b_inner = ad.b_inner + nora::random_matrix(r_out, r_in, rng, 0.5);
            ad.a_inner = ad.a_inner + nora::random_matrix(r_in, r_out, rng, 0.5);
            nora::save_adapter(ad, path);
            const auto loaded = std::get<nora::NoraAdapter>(nora::load_adapter(path));
            if (!check(loaded == ad, "nora round-trip mismatch at rep " + std::to_string(rep),
                       detail)) {
                return false;
            }
        }
        if (rep < 4) {
            const std::string keep = (g_workdir / ("fuzz_base_" + std::to_string(rep) +
                                                   ".nora")).string();
            std::filesystem::copy_file(path, keep,
                                       std::filesystem::copy_options::overwrite_existing);
            kept_files.push_back(keep);
        }
    }

    // Fuzz: a single corrupted byte anywhere must be rejected.
    const std::string fuzzed = (g_workdir / "fuzzed.nora").string();
    for (int flip = 0; flip < 200; ++flip) {
        const std::string& base = kept_files[flip % kept_files.size()];
        std::ifstream in(base, std::ios::binary);
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
        const std::size_t pos = rng.index(bytes.size());
        const unsigned char mask = static_cast<unsigned char>(1 + rng.index(255));
        bytes[pos] ^= mask;
        std::ofstream out(fuzzed, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        out.close();
        try {
            (void)nora::load_adapter(fuzzed);
            detail = "flip " + std::to_string(flip) + " at byte " + std::to_string(pos) +
                     " was accepted";
            return false;
        } catch (const nora::CorruptionError&) {
        } catch (const nora::FormatError&) {
        }
        // Any other exception type escapes and fails the criterion.
    }
    return true;
}

// ------------------------------------------------------------ criterion 10

// Each CLI subcommand is stdout-deterministic; gradcheck exits 0 on the
// shipped fixture adapters.
bool criterion_cli(std::string& detail) {
    const std::string weight = (g_workdir / "w.mat").string();
    nora::save_matrix(nora::gen_matrix(12, 10, 31415), weight);
    const std::string adapter = (g_workdir / "cli.nora").string();
    const std::string trained = (g_workdir / "cli_trained.nora").string();
    const std::string history = (g_workdir / "cli_hist.csv").string();
    const std::string merged = (g_workdir / "cli_merged.mat").string();

    const std::vector<std::string> commands = {
        "init --weight " + weight + " --r-out 5 --r-in 2 -o " + adapter,
        "inspect --adapter " + adapter,
        "inspect --adapter " + adapter + " --json",
        "budget --layers 32 --per-layer 4 --hidden 4096 --lora-rank 16 --r-out 64 --r-in 16",
        "budget --layers 2 --per-layer 2 --hidden 64 --lora-rank 4 --r-out 16 --r-in 4 --csv",
        "gradcheck --adapter " + adapter,
        "merge --adapter " + adapter + " --weight " + weight + " -o " + merged,
        "train --adapter " + adapter + " --task lowrank:12:10:1:31415 --steps 15 " +
            "--lr 0.01 --opt adam -o " + trained + " --history " + history,
    };
    for (const auto& cmd : commands) {
        const CommandResult first = run_cli(cmd);
        const CommandResult second = run_cli(cmd);
        if (!check(first.exit_code == 0,
                   "exit " + std::to_string(first.exit_code) + " from: " + cmd, detail)) {
            return false;
        }
        if (!check(first.out == second.out, "stdout differs across runs of: " + cmd,
                   detail)) {
            return false;
        }
    }

    for (const char* fixture : {"lora_7x5_r2.nora", "nora_16x12_r6_r2.nora"}) {
        const std::string path = (g_fixtures / fixture).string();
        const CommandResult r = run_cli("gradcheck --adapter " + path);
        if (!check(r.exit_code == 0,
                   std::string("gradcheck exit ") + std::to_string(r.exit_code) + " on " +
                       fixture, detail)) {
            return false;
        }
    }
    return true;
}

struct Criterion {
    int id;
    const char* name;
    double time_limit;
    std::function<bool(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: acceptance <path-to-cli> <fixtures-dir>\n");
        return 2;
    }
    g_cli = argv[1];
    g_fixtures = argv[2];
    g_workdir = std::filesystem::temp_directory_path() /
                ("nora_acceptance_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(g_workdir);

    const std::vector<Criterion> criteria = {
        {1, "SVD fidelity (200 matrices, recon < 1e-9, ortho < 1e-10)", 30.0,
         criterion_svd_fidelity},
        {2, "init identity vs truncated-SVD oracle (50 cases, < 1e-9)", 10.0,
         criterion_init_identity},
        {3, "gradients vs finite differences (20+20 cases, < 1e-5)", 60.0,
         criterion_gradients},
        {4, "freeze contract over 500 steps (byte-hash equality)", 60.0, criterion_freeze},
        {5, "parameter formulas (1000 specs, exact integers)", 10.0,
         criterion_budget_formulas},
        {6, "cross-module count agreement (50 specs)", 5.0, criterion_count_agreement},
        {7, "merge equivalence (32 probes, both kinds, pre/post training)", 5.0,
         criterion_merge},
        {8, "capacity/efficiency vs LoRA at the committed budget (<= 1.1x)", 120.0,
         criterion_capacity_efficiency},
        {9, "serialization round-trip + 200-flip fuzz rejection", 10.0,
         criterion_serialization},
        {10, "CLI determinism and fixture gradcheck", 120.0, criterion_cli},
    };

    bool all_pass = true;
    for (const auto& c : criteria) {
        std::string detail;
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (ok && elapsed > c.time_limit) {
            ok = false;
            detail = "time limit exceeded (" + std::to_string(elapsed) + "s > " +
                     std::to_string(c.time_limit) + "s)";
        }
        all_pass = all_pass && ok;
        std::printf("[%s] criterion %2d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", c.id,
                    c.name, elapsed, detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
    }

    std::filesystem::remove_all(g_workdir);
    return all_pass ? 0 : 1;
}
