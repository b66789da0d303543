// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nora {

/// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence
/// is fixed by the standard) and applies its own uniform/normal transforms so
/// that the produced doubles do not depend on library-specific distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in (0, 1).
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (cosine branch only).
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    /// Uniform index in [0, bound). bound must be nonzero.
    std::size_t index(std::size_t bound) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
    }

private:
    std::mt19937_64 engine_;
};

/// Stable sub-seed derivation (splitmix64 of seed xor stream tag).
std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace nora
