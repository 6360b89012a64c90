#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace xlmt {

// splitmix64: the mixing function behind the stateful stream and the
// counter-based dropout generator. Bit-exact on every platform.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b) ^ mix64(c)); }

inline double u64_to_unit(uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;  // [0, 1)
}

// Small sequential generator for corpus generation, shuffles and init.
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(mix64(seed)) {}

    uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t x = state;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    double uniform() { return u64_to_unit(next_u64()); }

    // [0, n)
    int64_t below(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)); }

    double normal() {
        // Box-Muller; one value per call, the pair partner is discarded.
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }
};

// Counter-based uniform in [0,1): pure function of (seed, site, index), so
// dropout masks are reproducible without carrying generator state.
inline double counter_uniform(uint64_t seed, uint64_t site, uint64_t index) {
    return u64_to_unit(mix64(seed, site, index));
}

}  // namespace xlmt
