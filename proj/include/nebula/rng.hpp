#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "nebula/errors.hpp"

namespace nebula {

// Counter-based splittable generator (SplitMix64 core). Substreams are derived
// by mixing a base seed with integer keys, so any (setting, replication, purpose)
// tuple owns an independent, reproducible stream regardless of thread schedule.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kGamma)) {}

    // Derives an independent stream from a seed and a key path, e.g.
    // Rng::stream(seed, {setting_id, replication_id, kPurposeTag}).
    static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        std::uint64_t h = mix(seed ^ kGamma);
        for (std::uint64_t k : keys)
            h = mix(h ^ mix(k + kGamma));
        Rng rng(0);
        rng.state_ = h;
        return rng;
    }

    std::uint64_t next_u64() {
        state_ += kGamma;
        return mix(state_);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer on [0, n), rejection-free of modulo bias.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0)
            throw DomainError("uniform_int: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r = next_u64();
        while (r >= limit)
            r = next_u64();
        return r % n;
    }

    // Box-Muller; consumes exactly two uniforms per draw.
    double normal(double mean, double sd) {
        const double u1 = 1.0 - uniform01(); // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Binomial(2, p) genotype draw under Hardy-Weinberg equilibrium.
    int binomial2(double p) { return static_cast<int>(bernoulli(p)) + static_cast<int>(bernoulli(p)); }

    // k distinct indices from {0, ..., n-1}, returned sorted ascending.
    // Floyd's algorithm; uniform over subsets.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n)
            throw DomainError("sample_without_replacement: k exceeds n");
        std::vector<std::size_t> picked;
        picked.reserve(k);
        auto contains = [&picked](std::size_t v) {
            for (std::size_t p : picked)
                if (p == v)
                    return true;
            return false;
        };
        for (std::size_t j = n - k; j < n; ++j) {
            const std::size_t t = static_cast<std::size_t>(uniform_int(j + 1));
            picked.push_back(contains(t) ? j : t);
        }
        std::sort(picked.begin(), picked.end());
        return picked;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[uniform_int(i)]);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace nebula
