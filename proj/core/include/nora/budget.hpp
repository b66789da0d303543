// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nora {

/// Trainable-parameter accounting for a model with `layers` finetuned
/// layers, each holding `matrices_per_layer` square hidden x hidden weight
/// matrices. Setting `rect_m` nonzero switches the LoRA count to the
/// rectangular form r*(m+n); the square case is the default.
struct BudgetSpec {
    std::uint64_t layers = 1;              // L
    std::uint64_t matrices_per_layer = 1;  // q
    std::uint64_t hidden = 1;              // n
    std::uint64_t lora_rank = 1;           // r
    std::uint64_t outer_rank = 1;          // r_out
    std::uint64_t inner_rank = 1;          // r_in
    std::uint64_t rect_m = 0;              // optional m for rectangular weights
};

/// Throws RankError unless r <= n and r_in <= r_out <= n (and <= min(m, n)
/// in the rectangular case).
void validate(const BudgetSpec& s);

/// L * q * r * 2n  (rectangular extension: L * q * r * (m + n)).
std::uint64_t lora_params(const BudgetSpec& s);

/// L * q * r_out * r_in * 2. Independent of the hidden size.
std::uint64_t nora_params(const BudgetSpec& s);

/// (r * n) / (r_out * r_in) == lora_params / nora_params.
/// Reduces to n / r_out exactly when r == r_in.
double efficiency_ratio(const BudgetSpec& s);

struct BudgetRow {
    std::string name;
    BudgetSpec spec;
    std::uint64_t lora = 0;
    std::uint64_t nora = 0;
    double ratio = 0.0;
    double approx_ratio = 0.0;  // n / r_out
};

struct BudgetReport {
    std::vector<BudgetRow> rows;
    std::vector<std::string> assumptions;
};

/// Builds one row per named spec. Throws UsageError on an empty list.
BudgetReport budget_report(std::span<const std::pair<std::string, BudgetSpec>> specs);

/// "8.4M"-style human formatting: round-half-up to one decimal of millions
/// (or thousands); plain digits below 1000.
std::string format_param_count(std::uint64_t params);

std::string render_text(const BudgetReport& report);
std::string render_csv(const BudgetReport& report);

}  // namespace nora
