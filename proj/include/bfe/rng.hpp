#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "bfe/common.hpp"

namespace bfe {

/// splitmix64 step; used to derive independent stream seeds from one base seed.
inline std::uint64_t split_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return split_seed(split_seed(base) + index);
}

/// Deterministic random stream. The u01 mapping is fixed here (rather than
/// delegated to std::uniform_real_distribution, whose output is
/// implementation-defined) so that seeded runs are reproducible.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    double u01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Draws an index from a probability row via inverse CDF.
    int categorical(std::span<const double> probs) {
        const double u = u01();
        double cum = 0.0;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace bfe
