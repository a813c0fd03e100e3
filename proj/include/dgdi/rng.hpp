#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace dgdi {

// Self-contained xoshiro256** generator. The standard <random> distributions
// are not bit-stable across library implementations, so every draw the
// artifact makes goes through this type instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, bound), unbiased via rejection.
    std::uint64_t below(std::uint64_t bound);

    // Uniform in [0, 1) with 53 random bits.
    double uniform();

    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; draws are cached in pairs.
    double normal();

    // Fisher-Yates in-place shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> state_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

// Labeled sub-stream derivation: all randomness flows from one root seed,
// expanded per purpose ("init", "corrupt", "shuffle", "synth", ...) and a
// counter. Streams are independent of evaluation order, so skipping one
// consumer (e.g. corruption when lambda1 = 0) never shifts the others.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view label, std::uint64_t counter = 0);

Rng stream(std::uint64_t root_seed, std::string_view label, std::uint64_t counter = 0);

}  // namespace dgdi
