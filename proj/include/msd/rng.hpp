#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "msd/common.hpp"

namespace msd {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a master seed and a label, so each
// component (init, batching, augmentation, sampling, ...) owns its own stream
// and results do not depend on the order components consume randomness.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(seed ^ splitmix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    return splitmix64(derive_seed(seed, tag) ^ splitmix64(index));
}

// mt19937_64 with hand-rolled distributions: the engine is bit-exact across
// standard libraries, std::*_distribution is not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) fail_contract("uniform_int: n must be positive, got ", n);
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return static_cast<std::int64_t>(x % un);
    }

    // [lo, hi)
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + uniform_int(hi - lo);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace msd
