#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmkgr {

// splitmix64, used to spread user seeds and derive named sub-streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// One global seed fans out to named sub-streams so changing how one stage
// consumes randomness cannot perturb the others. `index` separates repeated
// uses of the same stream (per-epoch, per-seed-replicate).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                 std::uint64_t index = 0) {
    return splitmix64(splitmix64(root ^ fnv1a64(stream)) + index);
}

// mt19937_64 engine with hand-rolled distributions. The standard
// distributions are implementation-defined, which would break byte-identical
// reruns across toolchains; these are fixed algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint64_t bound = UINT64_MAX - UINT64_MAX % static_cast<std::uint64_t>(n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= bound);
        return static_cast<int>(x % static_cast<std::uint64_t>(n));
    }

    // Box-Muller, pair cached.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

    // Index sampled proportionally to non-negative weights. Rounding can
    // leave residual mass after the scan; it falls to the last positive
    // entry, never to a zero-weight one.
    int categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (total <= 0.0) throw std::invalid_argument("categorical: non-positive total weight");
        double u = uniform01() * total;
        int last_positive = -1;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            last_positive = static_cast<int>(i);
            u -= weights[i];
            if (u < 0.0) return last_positive;
        }
        return last_positive;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(v[i], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mmkgr
