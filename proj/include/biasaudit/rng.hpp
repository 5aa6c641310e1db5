#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace biasaudit {

// Deterministic random helpers over std::mt19937_64.
//
// The engine itself is fully specified by the standard, but the std
// distributions (uniform_int_distribution, normal_distribution) and
// std::shuffle are not: their output may differ between standard library
// implementations. Everything here consumes engine output through fixed
// algorithms so that a seed reproduces identical streams on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via basic Box-Muller. One value per call; the second
    // root is discarded so there is no hidden cache coupling call sites.
    double gaussian() {
        double u1 = 1.0 - uniform01(); // (0, 1], keeps log finite
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    void gaussian_fill(std::vector<double>& out, std::size_t n) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = gaussian();
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Fisher-Yates. Deterministic replacement for std::shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

} // namespace biasaudit
