// SPDX-License-Identifier: Apache-2.0
#include "nora/io.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "nora/error.hpp"
#include "nora/svd.hpp"
#include "nora/version.hpp"

namespace nora {

namespace {

constexpr unsigned char k_magic[5] = {'N', 'O', 'R', 'A', '1'};
constexpr std::uint64_t k_max_dim = 1u << 24;  // per-axis sanity bound

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_matrix(std::vector<unsigned char>& out, const Matrix& m) {
    for (double v : m.data()) put_f64(out, v);
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

double get_f64(const unsigned char* p) {
    return std::bit_cast<double>(get_u64(p));
}

Matrix get_matrix(const unsigned char* p, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    auto out = m.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_f64(p + 8 * i);
    return m;
}

void write_atomic(const std::string& path, std::span<const unsigned char> bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

void finish_and_write(std::vector<unsigned char>& bytes, const std::string& path) {
    put_u64(bytes, fnv1a(bytes));
    write_atomic(path, bytes);
}

std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path);
    return bytes;
}

struct Header {
    std::uint8_t kind = 0;
    std::vector<std::uint64_t> dims;
    double scale = 1.0;
    std::uint8_t flags = 0;
    std::size_t payload_offset = 0;
    std::uint64_t payload_doubles = 0;
};

std::size_t dim_count_for(std::uint8_t kind) {
    switch (kind) {
        case file_kind::lora: return 3;
        case file_kind::nora: return 4;
        case file_kind::matrix: return 2;
        default: throw FormatError("unknown kind byte " + std::to_string(kind));
    }
}

std::uint64_t payload_doubles_for(std::uint8_t kind, const std::vector<std::uint64_t>& d) {
    switch (kind) {
        case file_kind::lora: return d[2] * d[1] + d[0] * d[2];                  // a, b
        case file_kind::nora: return d[0] * d[2] + d[2] * d[1] + 2 * d[2] * d[3];  // u, vt, inner
        default: return d[0] * d[1];
    }
}

// Parses and validates everything up to and including the checksum. The
// checksum is verified before any field beyond the header is interpreted.
Header parse_header(const std::vector<unsigned char>& bytes, const std::string& path) {
    if (bytes.size() < sizeof(k_magic) + 1) {
        throw CorruptionError(path + ": truncated file (" + std::to_string(bytes.size()) +
                              " bytes)");
    }
    for (std::size_t i = 0; i < sizeof(k_magic); ++i) {
        if (bytes[i] != k_magic[i]) throw FormatError(path + ": bad magic");
    }
    Header h;
    h.kind = bytes[5];
    const std::size_t ndims = dim_count_for(h.kind);
    const std::size_t header_size = 5 + 1 + ndims * 4 + 8 + 1;
    if (bytes.size() < header_size + 8) {
        throw CorruptionError(path + ": truncated header (" +
                              std::to_string(bytes.size()) + " bytes)");
    }
    h.dims.resize(ndims);
    for (std::size_t i = 0; i < ndims; ++i) {
        h.dims[i] = get_u32(bytes.data() + 6 + 4 * i);
        if (h.dims[i] < 1 || h.dims[i] > k_max_dim) {
            throw FormatError(path + ": dimension overflow (dim " + std::to_string(i) +
                              " = " + std::to_string(h.dims[i]) + ")");
        }
    }
    h.scale = get_f64(bytes.data() + 6 + 4 * ndims);
    h.flags = bytes[6 + 4 * ndims + 8];
    h.payload_offset = header_size;
    h.payload_doubles = payload_doubles_for(h.kind, h.dims);

    const std::uint64_t expected = header_size + h.payload_doubles * 8 + 8;
    if (bytes.size() != expected) {
        throw CorruptionError(path + ": length " + std::to_string(bytes.size()) +
                              " does not match header-implied " + std::to_string(expected));
    }
    const std::uint64_t stored = get_u64(bytes.data() + bytes.size() - 8);
    const std::uint64_t actual =
        fnv1a(std::span(bytes.data(), bytes.size() - 8));
    if (stored != actual) {
        throw CorruptionError(path + ": checksum mismatch");
    }
    return h;
}

void warn_if_not_orthonormal(const NoraAdapter& ad, const std::string& path) {
    const Matrix ui = matmul(transpose(ad.u_r), ad.u_r) - Matrix::identity(ad.r_out());
    const Matrix vi = matmul(ad.vt_r, transpose(ad.vt_r)) - Matrix::identity(ad.r_out());
    const double defect = std::max(frobenius_norm(ui), frobenius_norm(vi));
    if (defect > 1e-9) {
        std::fprintf(stderr, "warning: %s: outer factors deviate from orthonormality "
                             "(defect %g)\n", path.c_str(), defect);
    }
}

}  // namespace

std::uint64_t fnv1a(std::span<const unsigned char> bytes) {
    std::uint64_t hash = 14695981039346656037ULL;
    for (unsigned char b : bytes) {
        hash ^= b;
        hash *= 1099511628211ULL;
    }
    return hash;
}

void save_adapter(const LoraAdapter& ad, const std::string& path) {
    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), std::begin(k_magic), std::end(k_magic));
    bytes.push_back(file_kind::lora);
    put_u32(bytes, static_cast<std::uint32_t>(ad.m()));
    put_u32(bytes, static_cast<std::uint32_t>(ad.n()));
    put_u32(bytes, static_cast<std::uint32_t>(ad.r()));
    put_f64(bytes, ad.scale);
    bytes.push_back(0);
    put_matrix(bytes, ad.a);
    put_matrix(bytes, ad.b);
    finish_and_write(bytes, path);
}

void save_adapter(const NoraAdapter& ad, const std::string& path) {
    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), std::begin(k_magic), std::end(k_magic));
    bytes.push_back(file_kind::nora);
    put_u32(bytes, static_cast<std::uint32_t>(ad.m()));
    put_u32(bytes, static_cast<std::uint32_t>(ad.n()));
    put_u32(bytes, static_cast<std::uint32_t>(ad.r_out()));
    put_u32(bytes, static_cast<std::uint32_t>(ad.r_in()));
    put_f64(bytes, ad.scale);
    bytes.push_back(ad.residual_init ? 1 : 0);
    put_matrix(bytes, ad.u_r);
    put_matrix(bytes, ad.vt_r);
    put_matrix(bytes, ad.b_inner);
    put_matrix(bytes, ad.a_inner);
    finish_and_write(bytes, path);
}

void save_matrix(const Matrix& m, const std::string& path) {
    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), std::begin(k_magic), std::end(k_magic));
    bytes.push_back(file_kind::matrix);
    put_u32(bytes, static_cast<std::uint32_t>(m.rows()));
    put_u32(bytes, static_cast<std::uint32_t>(m.cols()));
    put_f64(bytes, 1.0);
    bytes.push_back(0);
    put_matrix(bytes, m);
    finish_and_write(bytes, path);
}

AnyAdapter load_adapter(const std::string& path) {
    const std::vector<unsigned char> bytes = read_all(path);
    const Header h = parse_header(bytes, path);
    const unsigned char* p = bytes.data() + h.payload_offset;
    if (h.kind == file_kind::lora) {
        const std::uint64_t m = h.dims[0], n = h.dims[1], r = h.dims[2];
        if (r > std::min(m, n)) {
            throw FormatError(path + ": rank " + std::to_string(r) +
                              " exceeds min(m, n)");
        }
        LoraAdapter ad;
        ad.a = get_matrix(p, r, n);
        ad.b = get_matrix(p + r * n * 8, m, r);
        ad.scale = h.scale;
        return ad;
    }
    if (h.kind == file_kind::nora) {
        const std::uint64_t m = h.dims[0], n = h.dims[1];
        const std::uint64_t r_out = h.dims[2], r_in = h.dims[3];
        if (r_in > r_out || r_out > std::min(m, n)) {
            throw FormatError(path + ": ranks r_out=" + std::to_string(r_out) +
                              " r_in=" + std::to_string(r_in) + " are inconsistent with " +
                              std::to_string(m) + "x" + std::to_string(n));
        }
        NoraAdapter ad;
        ad.u_r = get_matrix(p, m, r_out);
        p += m * r_out * 8;
        ad.vt_r = get_matrix(p, r_out, n);
        p += r_out * n * 8;
        ad.b_inner = get_matrix(p, r_out, r_in);
        p += r_out * r_in * 8;
        ad.a_inner = get_matrix(p, r_in, r_out);
        ad.scale = h.scale;
        ad.residual_init = (h.flags & 1) != 0;
        warn_if_not_orthonormal(ad, path);
        return ad;
    }
    throw FormatError(path + ": not an adapter file (kind " + std::to_string(h.kind) + ")");
}

Matrix load_matrix(const std::string& path) {
    const std::vector<unsigned char> bytes = read_all(path);
    const Header h = parse_header(bytes, path);
    if (h.kind != file_kind::matrix) {
        throw FormatError(path + ": not a matrix file (kind " + std::to_string(h.kind) + ")");
    }
    return get_matrix(bytes.data() + h.payload_offset, h.dims[0], h.dims[1]);
}

void export_history(const TrainHistory& history, const std::string& path) {
    std::string text = "step,loss\n";
    char line[64];
    for (std::size_t i = 0; i < history.losses.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.17g\n", i, history.losses[i]);
        text += line;
    }
    write_atomic(path, std::span(reinterpret_cast<const unsigned char*>(text.data()),
                                 text.size()));
}

std::string file_hash_hex(const std::string& path) {
    const std::vector<unsigned char> bytes = read_all(path);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

void write_run_manifest(const std::string& path, const TrainConfig& cfg,
                        const std::string& task_descriptor,
                        const std::string& adapter_in, const std::string& adapter_out,
                        const std::string& history_path, double wall_seconds) {
    nlohmann::json manifest;
    manifest["tool"] = std::string("nora ") + k_version;
    manifest["task"] = task_descriptor;
    manifest["config"] = {
        {"steps", cfg.steps},
        {"batch", cfg.batch},
        {"lr", cfg.lr},
        {"optimizer", cfg.optimizer == Optimizer::sgd ? "sgd" : "adam"},
        {"adam_beta1", cfg.adam_beta1},
        {"adam_beta2", cfg.adam_beta2},
        {"adam_eps", cfg.adam_eps},
        {"seed", cfg.seed},
        {"loss", cfg.loss == LossKind::mse ? "mse" : "cross_entropy"},
    };
    nlohmann::json artifacts;
    if (!adapter_in.empty()) {
        artifacts["adapter_in"] = {{"path", adapter_in}, {"fnv1a", file_hash_hex(adapter_in)}};
    }
    if (!adapter_out.empty()) {
        artifacts["adapter_out"] = {{"path", adapter_out},
                                    {"fnv1a", file_hash_hex(adapter_out)}};
    }
    if (!history_path.empty()) {
        artifacts["history"] = {{"path", history_path}, {"fnv1a", file_hash_hex(history_path)}};
    }
    manifest["artifacts"] = std::move(artifacts);
    manifest["wall_seconds"] = wall_seconds;

    const std::string text = manifest.dump(2) + "\n";
    write_atomic(path, std::span(reinterpret_cast<const unsigned char*>(text.data()),
                                 text.size()));
}

}  // namespace nora
