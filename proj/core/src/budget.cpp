// SPDX-License-Identifier: Apache-2.0
#include "nora/budget.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "nora/error.hpp"

namespace nora {

void validate(const BudgetSpec& s) {
    if (s.layers < 1 || s.matrices_per_layer < 1 || s.hidden < 1) {
        throw RankError("budget: layers, matrices_per_layer and hidden must be >= 1");
    }
    const std::uint64_t cap = s.rect_m ? std::min(s.rect_m, s.hidden) : s.hidden;
    if (s.lora_rank < 1 || s.lora_rank > cap) {
        throw RankError("budget: lora_rank " + std::to_string(s.lora_rank) +
                        " outside [1, " + std::to_string(cap) + "]");
    }
    if (s.inner_rank < 1 || s.inner_rank > s.outer_rank || s.outer_rank > cap) {
        throw RankError("budget: need 1 <= r_in <= r_out <= " + std::to_string(cap) +
                        ", got r_out=" + std::to_string(s.outer_rank) +
                        " r_in=" + std::to_string(s.inner_rank));
    }
}

std::uint64_t lora_params(const BudgetSpec& s) {
    validate(s);
    const std::uint64_t per_matrix =
        s.rect_m ? s.lora_rank * (s.rect_m + s.hidden) : s.lora_rank * 2 * s.hidden;
    return s.layers * s.matrices_per_layer * per_matrix;
}

std::uint64_t nora_params(const BudgetSpec& s) {
    validate(s);
    return s.layers * s.matrices_per_layer * s.outer_rank * s.inner_rank * 2;
}

double efficiency_ratio(const BudgetSpec& s) {
    return static_cast<double>(lora_params(s)) / static_cast<double>(nora_params(s));
}

BudgetReport budget_report(std::span<const std::pair<std::string, BudgetSpec>> specs) {
    if (specs.empty()) throw UsageError("budget_report: empty spec list");
    BudgetReport report;
    bool any_rect = false;
    for (const auto& [name, spec] : specs) {
        BudgetRow row;
        row.name = name;
        row.spec = spec;
        row.lora = lora_params(spec);
        row.nora = nora_params(spec);
        row.ratio = efficiency_ratio(spec);
        row.approx_ratio =
            static_cast<double>(spec.hidden) / static_cast<double>(spec.outer_rank);
        any_rect = any_rect || spec.rect_m != 0;
        report.rows.push_back(std::move(row));
    }
    report.assumptions = {
        "all L*q weight matrices are adapted; counts cover adapter factors only",
        any_rect ? "rectangular m x n weights counted as r*(m+n) for the low-rank baseline"
                 : "square n x n weight matrices",
        "nested counts include the two inner factors only (outer factors frozen)",
        "approx column is n / r_out, exact when the baseline rank equals r_in",
    };
    return report;
}

std::string format_param_count(std::uint64_t params) {
    char buf[32];
    if (params >= 1000000) {
        const std::uint64_t tenths = (params + 50000) / 100000;  // round half up
        std::snprintf(buf, sizeof(buf), "%llu.%lluM",
                      static_cast<unsigned long long>(tenths / 10),
                      static_cast<unsigned long long>(tenths % 10));
    } else if (params >= 1000) {
        const std::uint64_t tenths = (params + 50) / 100;
        std::snprintf(buf, sizeof(buf), "%llu.%lluK",
                      static_cast<unsigned long long>(tenths / 10),
                      static_cast<unsigned long long>(tenths % 10));
    } else {
        std::snprintf(buf, sizeof(buf), "%llu", static_cast<unsigned long long>(params));
    }
    return buf;
}

namespace {

std::string format_ratio(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string render_text(const BudgetReport& report) {
    std::ostringstream out;
    std::size_t name_w = 4;
    for (const auto& row : report.rows) name_w = std::max(name_w, row.name.size());
    char line[256];
    std::snprintf(line, sizeof(line), "%-*s %14s %14s %10s %10s %8s %8s\n",
                  static_cast<int>(name_w), "name", "lora_params", "nora_params",
                  "lora", "nora", "ratio", "approx");
    out << line;
    for (const auto& row : report.rows) {
        std::snprintf(line, sizeof(line), "%-*s %14llu %14llu %10s %10s %8.6g %8.6g\n",
                      static_cast<int>(name_w), row.name.c_str(),
                      static_cast<unsigned long long>(row.lora),
                      static_cast<unsigned long long>(row.nora),
                      format_param_count(row.lora).c_str(),
                      format_param_count(row.nora).c_str(), row.ratio,
                      row.approx_ratio);
        out << line;
    }
    for (const auto& a : report.assumptions) out << "# assumption: " << a << "\n";
    return out.str();
}

std::string render_csv(const BudgetReport& report) {
    std::ostringstream out;
    out << "name,lora_params,nora_params,lora_human,nora_human,ratio,approx_ratio\n";
    for (const auto& row : report.rows) {
        out << row.name << ',' << row.lora << ',' << row.nora << ','
            << format_param_count(row.lora) << ',' << format_param_count(row.nora) << ','
            << format_ratio(row.ratio) << ',' << format_ratio(row.approx_ratio) << "\n";
    }
    return out.str();
}

}  // namespace nora
