#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace lco {

/// splitmix64 step; used for seeding and for deriving per-worker seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a base seed with a stream index into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// xoshiro256++ seeded through splitmix64. All distributions are implemented
/// here rather than through <random> so draws are identical across standard
/// library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n), unbiased (rejection sampling).
    std::size_t uniform_int(std::size_t n);
    /// Standard normal via Box-Muller (no cached second value).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates permutation of [0, n).
    std::vector<std::size_t> permutation(std::size_t n);
    /// `k` distinct values from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::uint64_t s_[4];
};

}  // namespace lco
