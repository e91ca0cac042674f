#pragma once

#include <cmath>
#include <cstdint>

// Counter-based randomness for reproducible simulation. Every draw is a pure
// function of (seed, purpose, a, b, c): no generator state, so draws do not
// depend on event processing order and identical scenarios give identical
// streams on every platform. Mixing is splitmix64; normals come from
// Box-Muller. Latency draws are quantized to integer nanoseconds before use,
// which keeps the event clock exact in int64 arithmetic.

namespace eaid::sim {

enum class stream : uint64_t {
    latency = 1,     // (node, entry, transmission round) -> round trip
    broadcast = 2,   // one-way delay of a fan-out message
    heartbeat = 3,
    payload = 4,     // synthetic message bytes
    shuffle = 5,
    kv = 6,
};

struct rng {
    uint64_t seed = 0;

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t bits(stream s, uint64_t a, uint64_t b, uint64_t c) const {
        uint64_t h = mix(seed ^ 0xa0761d6478bd642full);
        h = mix(h ^ static_cast<uint64_t>(s));
        h = mix(h ^ a);
        h = mix(h ^ b);
        h = mix(h ^ c);
        return h;
    }

    // Uniform in (0, 1].
    double uniform(stream s, uint64_t a, uint64_t b, uint64_t c) const {
        return (static_cast<double>(bits(s, a, b, c) >> 11) + 1.0) * 0x1.0p-53;
    }

    double normal(stream s, uint64_t a, uint64_t b, uint64_t c, double mean,
                  double stddev) const {
        const double u1 = uniform(s, a, b, c ^ 0x5151ull);
        const double u2 = uniform(s, a, b, c ^ 0xa2a2ull);
        const double z =
            std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        return mean + stddev * z;
    }

    // Round-trip latency in nanoseconds, truncated below at 0.05 ms
    // (negative or near-zero draws are physically meaningless).
    int64_t latency_ns(uint64_t node, uint64_t entry, uint64_t round,
                       double mean_ms, double stddev_ms) const {
        const double ms =
            stddev_ms == 0.0
                ? mean_ms
                : normal(stream::latency, node, entry, round, mean_ms, stddev_ms);
        const auto ns = static_cast<int64_t>(std::llround(ms * 1e6));
        return ns < 50'000 ? 50'000 : ns;
    }

    int64_t one_way_ns(stream s, uint64_t a, uint64_t b, double mean_ms,
                       double stddev_ms) const {
        const double ms = stddev_ms == 0.0
                              ? mean_ms
                              : normal(s, a, b, 0, mean_ms, stddev_ms);
        const auto ns = static_cast<int64_t>(std::llround(ms * 0.5e6));
        return ns < 25'000 ? 25'000 : ns;
    }
};

}  // namespace eaid::sim
