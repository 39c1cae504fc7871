#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sesim {

// Error taxonomy shared by all modules. The CLI maps these onto stable
// exit codes (config 2, data 3, numeric 4, artifact 5).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UndefinedMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// SplitMix64 generator. Hand-rolled so that sampling is bit-reproducible
// across standard libraries; std::uniform_int_distribution et al. are
// implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be positive.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Uniform in [lo, hi).
    double next_range(double lo, double hi) {
        return lo + (hi - lo) * next_unit();
    }

    // Standard normal via Box-Muller.
    double next_normal();

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(xs[i - 1], xs[j]);
        }
    }

    // Derives an independent stream seed for a tagged purpose.
    static uint64_t mix(uint64_t seed, uint64_t tag) {
        Rng r(seed ^ (0x9e3779b97f4a7c15ull * (tag + 1)));
        return r.next_u64();
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// First k elements of a seeded random permutation of 0..n-1.
std::vector<int> sample_without_replacement(int n, int k, Rng& rng);

}  // namespace sesim
