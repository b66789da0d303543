// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "nora/adapter.hpp"
#include "nora/error.hpp"
#include "nora/io.hpp"
#include "nora/matrix.hpp"
#include "nora/train.hpp"

using nora::Matrix;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("nora_io_test_" + std::to_string(++counter) + "_" +
                std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("fnv1a: reference vectors") {
    // Standard FNV-1a 64-bit test values.
    CHECK(nora::fnv1a({}) == 14695981039346656037ULL);
    const unsigned char a[] = {'a'};
    CHECK(nora::fnv1a(std::span(a, 1)) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("save/load: LoRA round-trip is bit-identical") {
    TempDir dir;
    nora::LoraAdapter ad = nora::lora_init(6, 4, 2, 1001, 1.25);
    nora::Rng rng(5);
    ad.b = nora::random_matrix(6, 2, rng, 0.3);
    const std::string path = dir.file("lora.nora");
    nora::save_adapter(ad, path);
    const auto loaded = std::get<nora::LoraAdapter>(nora::load_adapter(path));
    CHECK(loaded == ad);
    CHECK(slurp(path).size() == nora::lora_file_size(6, 4, 2));
}

TEST_CASE("save/load: NoRA round-trip, size arithmetic, residual flag") {
    TempDir dir;
    const Matrix w = nora::gen_matrix(16, 12, 2002);
    const nora::NoraAdapter ad = nora::nora_init(w, 6, 2, 0.75, true);
    const std::string path = dir.file("nora.nora");
    nora::save_adapter(ad, path);
    const auto bytes = slurp(path);
    CHECK(bytes.size() == nora::nora_file_size(16, 12, 6, 2));
    CHECK(bytes.size() == 1575);  // 31-byte header + 192 doubles + checksum

    const auto loaded = std::get<nora::NoraAdapter>(nora::load_adapter(path));
    CHECK(loaded == ad);
    CHECK(loaded.residual_init);
}

TEST_CASE("save/load: matrix files") {
    TempDir dir;
    const Matrix m = nora::gen_matrix(5, 9, 3003);
    const std::string path = dir.file("w.mat");
    nora::save_matrix(m, path);
    CHECK(nora::load_matrix(path) == m);
    // An adapter loader must refuse a matrix file and vice versa.
    CHECK_THROWS_AS(nora::load_adapter(path), nora::FormatError);
    const std::string apath = dir.file("a.nora");
    nora::save_adapter(nora::lora_init(3, 3, 1, 1), apath);
    CHECK_THROWS_AS(nora::load_matrix(apath), nora::FormatError);
}

TEST_CASE("load: truncated file is a corruption error, nothing returned") {
    TempDir dir;
    const std::string path = dir.file("trunc.nora");
    nora::save_adapter(nora::lora_init(4, 4, 2, 7), path);
    auto bytes = slurp(path);
    for (std::size_t keep : {std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
        std::vector<unsigned char> cut(bytes.begin(),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(keep));
        spit(path, cut);
        CHECK_THROWS_AS(nora::load_adapter(path), nora::CorruptionError);
    }
}

TEST_CASE("load: bad magic is a format error") {
    TempDir dir;
    const std::string path = dir.file("magic.nora");
    nora::save_adapter(nora::lora_init(4, 4, 2, 7), path);
    auto bytes = slurp(path);
    bytes[0] = 'X';
    spit(path, bytes);
    CHECK_THROWS_AS(nora::load_adapter(path), nora::FormatError);
}

TEST_CASE("load: checksum flip is a corruption error") {
    TempDir dir;
    const std::string path = dir.file("flip.nora");
    nora::save_adapter(nora::lora_init(4, 4, 2, 7), path);
    auto bytes = slurp(path);
    bytes[bytes.size() / 2] ^= 0x40;
    spit(path, bytes);
    CHECK_THROWS_AS(nora::load_adapter(path), nora::CorruptionError);
}

TEST_CASE("load: missing file is an io error") {
    CHECK_THROWS_AS(nora::load_adapter("/nonexistent/nora/adapter.bin"), nora::IoError);
}

TEST_CASE("load: absurd dimensions are a format error") {
    TempDir dir;
    // Hand-built header: magic, kind=matrix, rows = 2^31, cols = 1.
    std::vector<unsigned char> bytes = {'N', 'O', 'R', 'A', '1', 255};
    bytes.insert(bytes.end(), {0, 0, 0, 0x80});  // rows (LE u32)
    bytes.insert(bytes.end(), {1, 0, 0, 0});     // cols
    bytes.resize(bytes.size() + 9, 0);           // scale + flags
    bytes.resize(bytes.size() + 8, 0);           // room for a checksum
    const std::string path = dir.file("huge.nora");
    spit(path, bytes);
    CHECK_THROWS_AS(nora::load_matrix(path), nora::FormatError);
}

TEST_CASE("export_history: line counts and bit-exact re-parse") {
    TempDir dir;

    nora::TrainHistory empty;
    const std::string p0 = dir.file("h0.csv");
    nora::export_history(empty, p0);
    {
        std::ifstream in(p0);
        std::string line;
        std::getline(in, line);
        CHECK(line == "step,loss");
        CHECK(!std::getline(in, line));
    }

    nora::TrainHistory three;
    three.losses = {1.0 / 3.0, 2.7182818284590452, 1e-300};
    const std::string p3 = dir.file("h3.csv");
    nora::export_history(three, p3);
    std::ifstream in(p3);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,loss");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        REQUIRE(comma != std::string::npos);
        CHECK(std::stoull(line.substr(0, comma)) == rows);
        const double parsed = std::strtod(line.c_str() + comma + 1, nullptr);
        CHECK(parsed == three.losses[rows]);  // 17 significant digits round-trip
        ++rows;
    }
    CHECK(rows == 3);
}

TEST_CASE("serialization round-trip property over random adapters") {
    TempDir dir;
    nora::Rng rng(4242);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t m = 2 + rng.index(10);
        const std::size_t n = 2 + rng.index(10);
        const std::size_t cap = std::min(m, n);
        if (rng.index(2) == 0) {
            const std::size_t r = 1 + rng.index(cap);
            nora::LoraAdapter ad = nora::lora_init(m, n, r, rng.next_u64(), rng.uniform());
            ad.b = nora::random_matrix(m, r, rng, 0.5);
            const std::string path = dir.file("rt.nora");
            nora::save_adapter(ad, path);
            CHECK(std::get<nora::LoraAdapter>(nora::load_adapter(path)) == ad);
        } else {
            const std::size_t r_out = 1 + rng.index(cap);
            const std::size_t r_in = 1 + rng.index(r_out);
            const Matrix w = nora::gen_matrix(m, n, rng.next_u64());
            nora::NoraAdapter ad = nora::nora_init(w, r_out, r_in, rng.uniform());
            ad.b_inner = ad.b_inner + nora::random_matrix(r_out, r_in, rng, 0.5);
            ad.a_inner = ad.a_inner + nora::random_matrix(r_in, r_out, rng, 0.5);
            const std::string path = dir.file("rt.nora");
            nora::save_adapter(ad, path);
            CHECK(std::get<nora::NoraAdapter>(nora::load_adapter(path)) == ad);
        }
    }
}
