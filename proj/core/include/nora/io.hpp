// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>

#include "nora/adapter.hpp"
#include "nora/matrix.hpp"
#include "nora/train.hpp"

namespace nora {

/// Binary container layout (all integers little-endian):
///   magic    5 bytes  "NORA1"
///   kind     u8       0 = LoRA, 1 = NoRA, 255 = plain matrix
///   dims     u32[]    LoRA: m, n, r | NoRA: m, n, r_out, r_in | matrix: rows, cols
///   scale    f64      (1.0 for plain matrices)
///   flags    u8       bit 0: residual_init was used
///   payload  f64[]    matrices row-major in declaration order
///                     (LoRA: a, b | NoRA: u_r, vt_r, b_inner, a_inner)
///   checksum u64      FNV-1a over all preceding bytes
namespace file_kind {
inline constexpr std::uint8_t lora = 0;
inline constexpr std::uint8_t nora = 1;
inline constexpr std::uint8_t matrix = 255;
}  // namespace file_kind

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const unsigned char> bytes);

/// Serialize to the container format. Writes are atomic
/// (temp file + rename). Throws IoError on filesystem failure.
void save_adapter(const LoraAdapter& ad, const std::string& path);
void save_adapter(const NoraAdapter& ad, const std::string& path);
void save_matrix(const Matrix& m, const std::string& path);

using AnyAdapter = std::variant<LoraAdapter, NoraAdapter>;

/// Loads and validates an adapter file. The checksum is verified before any
/// field beyond the header is interpreted. Bad magic or impossible
/// dimensions raise FormatError; truncation or checksum mismatch raise
/// CorruptionError; nothing is ever partially returned. A NoRA adapter whose
/// outer factors drift from orthonormality beyond 1e-9 is reported as a
/// warning on stderr, not an error.
AnyAdapter load_adapter(const std::string& path);

/// Loads a kind-255 matrix file.
Matrix load_matrix(const std::string& path);

/// CSV "step,loss" with losses printed to 17 significant digits
/// (round-trippable f64).
void export_history(const TrainHistory& history, const std::string& path);

/// FNV-1a of an existing file's bytes, as "0x..." hex.
std::string file_hash_hex(const std::string& path);

/// JSON manifest that pins everything needed to reproduce a training run:
/// tool version, full config echo, task descriptor, and FNV-1a hashes of the
/// input/output artifacts. Wall time lives here and only here. Empty paths
/// are skipped.
void write_run_manifest(const std::string& path, const TrainConfig& cfg,
                        const std::string& task_descriptor,
                        const std::string& adapter_in, const std::string& adapter_out,
                        const std::string& history_path, double wall_seconds);

inline constexpr std::uint64_t lora_file_size(std::uint64_t m, std::uint64_t n,
                                              std::uint64_t r) {
    return 5 + 1 + 3 * 4 + 8 + 1 + (r * n + m * r) * 8 + 8;
}
inline constexpr std::uint64_t nora_file_size(std::uint64_t m, std::uint64_t n,
                                              std::uint64_t r_out, std::uint64_t r_in) {
    return 5 + 1 + 4 * 4 + 8 + 1 + (m * r_out + r_out * n + 2 * r_out * r_in) * 8 + 8;
}

}  // namespace nora
