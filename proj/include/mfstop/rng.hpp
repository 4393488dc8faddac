#pragma once

#include <cmath>
#include <cstdint>

namespace mfstop {

// Deterministic RNG with explicit stream keys.
//
// Every particle gets its own stream derived from (seed, replication, stream id),
// so results are independent of evaluation order and thread count, and a particle
// keeps its noise when the surrounding population changes (common random numbers
// across population sizes fall out for free).
//
// Core generator is xoshiro256++ seeded through splitmix64; both are public-domain
// algorithms with well-known constants.
class Rng {
public:
    explicit Rng(std::uint64_t seed) { seed_state(seed); }

    // Stream key for particle-level noise. `tag` separates independent uses of the
    // same particle (0 = diffusion increments, 1 = stopping draws, ...).
    static Rng stream(std::uint64_t seed, std::uint64_t replication,
                      std::uint64_t stream_id, std::uint64_t tag = 0) {
        std::uint64_t k = mix(seed);
        k = mix(k ^ (0x9e3779b97f4a7c15ULL + replication));
        k = mix(k ^ (0xbf58476d1ce4e5b9ULL + stream_id));
        k = mix(k ^ (0x94d049bb133111ebULL + tag));
        return Rng(k);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // One standard Gaussian per call (Box-Muller, cosine branch). Slightly wasteful
    // but stateless between calls, which keeps draw counts predictable.
    double gaussian() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // splitmix64 finalizer; also used to combine key material.
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    void seed_state(std::uint64_t seed) {
        // splitmix64 sequence fills the xoshiro state; guards against the all-zero state.
        std::uint64_t s = seed;
        for (auto& w : s_) {
            s += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = s;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            w = z ^ (z >> 31);
        }
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    std::uint64_t s_[4];
};

} // namespace mfstop
