#pragma once

#include <cstdint>
#include <random>

namespace fewshot {

// Seedable random stream backed by std::mt19937_64.
//
// Child streams are derived from (seed, index) through two rounds of the
// SplitMix64 finalizer, so they depend only on the construction seed and the
// index, never on how much of the parent stream has been consumed.
class Rng {
public:
    using engine_type = std::mt19937_64;

    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;
    static Rng child(std::uint64_t seed, std::uint64_t index) { return Rng(derive_seed(seed, index)); }
    Rng child(std::uint64_t index) const { return child(seed_, index); }

    std::uint64_t next_u64() { return engine_(); }
    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal(double mean = 0.0, double stddev = 1.0);
    // Uniform on {0, ..., n-1}; n must be positive.
    std::size_t index(std::size_t n);

    engine_type& engine() noexcept { return engine_; }

private:
    std::uint64_t seed_;
    engine_type engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace fewshot
