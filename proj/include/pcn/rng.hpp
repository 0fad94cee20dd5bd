#ifndef PCN_RNG_HPP
#define PCN_RNG_HPP

#include <cmath>
#include <cstdint>

namespace pcn {

// splitmix64: used to derive sub-seeds (per class, per epoch, per fold) from a
// master seed so that changing one consumer does not perturb the others.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Fixed stream ids: each purpose gets its own PCG stream off the one config
// seed, so e.g. changing the fold count never perturbs training randomness.
namespace rng_stream {
constexpr uint64_t data = 1;
constexpr uint64_t init = 2;
constexpr uint64_t episodes = 3;
constexpr uint64_t folds = 4;
constexpr uint64_t clustering = 5;
constexpr uint64_t baselines = 6;
}  // namespace rng_stream

// PCG32 (pcg_xsh_rr_64_32): 64-bit state, 64-bit stream selector, portable and
// fully deterministic across platforms for a given (seed, stream).
class Pcg32 {
public:
    explicit Pcg32(uint64_t seed, uint64_t stream = 0) {
        inc_ = (stream << 1u) | 1u;
        state_ = 0u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Unbiased uniform integer in [0, bound) via rejection.
    uint64_t bounded(uint64_t bound) {
        if (bound <= 1) return 0;
        uint64_t threshold = (~bound + 1u) % bound;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 1;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pcn

#endif  // PCN_RNG_HPP
