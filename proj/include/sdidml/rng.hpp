#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <vector>

namespace sdidml {

// SplitMix64 step: the usual finalizer, used both as a stream splitter and to
// expand a user seed into engine state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and an index path,
// e.g. derive_seed(seed, {rep}) or derive_seed(seed, {fold, tree}).
// Counter-based: deterministic, order-sensitive, and collision-resistant
// enough for stream separation.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = base;
    std::uint64_t s = h;
    h = splitmix64(s);
    for (std::uint64_t p : path) {
        s = h ^ (p + 0x9e3779b97f4a7c15ULL);
        h = splitmix64(s);
        s = h;
        h = splitmix64(s);
    }
    return h;
}

// Deterministic RNG wrapper. Gaussian draws use a hand-rolled Box-Muller so
// sequences are identical across standard libraries (std::normal_distribution
// is not portable across implementations).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed), has_spare_(false), spare_(0.0) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform integer on [0, n), unbiased via rejection.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t x = eng_();
            if (x >= threshold) return x % n;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Random permutation of 0..n-1.
    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<std::size_t>(n));
        std::iota(p.begin(), p.end(), 0);
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_;
    double spare_;
};

} // namespace sdidml
