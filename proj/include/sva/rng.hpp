#pragma once

#include <cstdint>
#include <string_view>

namespace sva {

/// splitmix64 step; used for seeding and as a cheap hash combiner.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Deterministic 64-bit mix of two values (seed derivation, string hashing).
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (0x9E3779B97F4A7C15ULL + (b << 6) + (b >> 2));
    std::uint64_t x = splitmix64(s);
    return splitmix64(s) ^ x;
}

/// FNV-1a 64-bit string hash; platform-independent.
inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// xoshiro256** generator. Every stochastic operation in the project takes an
/// explicit stream of this type, so runs are bit-reproducible from the seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Modulo bias is irrelevant here (n << 2^64);
    /// what matters is determinism.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    /// Independent child stream; deterministic in (parent seed, tag).
    Rng fork(std::uint64_t tag) {
        return Rng(mix64(next_u64(), tag));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

/// Stable per-item seed: hash(master_seed, index).
inline std::uint64_t seed_for(std::uint64_t master, std::uint64_t index) {
    return mix64(master, index + 1);
}

} // namespace sva
