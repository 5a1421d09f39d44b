#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace mtirl {

/// Identifier of the sampling scheme, recorded in output metadata. The raw
/// generator is std::mt19937_64 (bit-exact across platforms by the standard);
/// uniform doubles take the top 53 bits, and categorical draws use an
/// inverse-CDF scan. std::* distributions are avoided on purpose: their
/// output is implementation-defined and would break byte-reproducibility.
inline constexpr const char* kRngAlgorithmId = "mt19937_64/u53-invcdf";

/// 64-bit FNV-1a. Used for stable stream labels and config hashes.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// SplitMix64 finalizer; scrambles seed material into well-mixed stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Folds a base seed with a path of components (task hash, role, index, ...)
/// into an independent stream seed. Parallel workers each get their own
/// stream this way; a generator is never shared between jobs.
inline std::uint64_t derive_stream(std::uint64_t base,
                                   std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t component : path) {
        h = splitmix64(h ^ component);
    }
    return h;
}

/// Seedable generator with platform-stable primitives.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Draws an index from an unnormalized non-negative weight vector by
    /// inverse-CDF scan. Weights are expected to sum to ~1 (distributions);
    /// any rounding shortfall resolves to the last positive-weight index.
    int categorical(const Eigen::VectorXd& weights) {
        const double total = weights.sum();
        const double u = uniform01() * total;
        double acc = 0.0;
        int last_positive = 0;
        for (int i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0) last_positive = i;
            acc += weights[i];
            if (u < acc) return i;
        }
        return last_positive;
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace mtirl
