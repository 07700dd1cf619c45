#pragma once

#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace aglsc {

// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded generator with platform-independent output. The engine is
// std::mt19937_64 (fully specified by the standard); all distributions are
// implemented here because the standard library's are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix64(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }

    // Independent child stream keyed by `stream`; does not advance this generator.
    Rng fork(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + 0x5851f42d4c957f2dULL))); }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ConfigError("Rng::below: empty range");
        const std::uint64_t limit = (~std::uint64_t{0} - n + 1) % n;
        for (;;) {
            const std::uint64_t x = engine_();
            if (x >= limit) return x % n;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, caching the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) std::iter_swap(first + (i - 1), first + below(i));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline DenseMatrix sample_gaussian(Rng& rng, Index rows, Index cols) {
    DenseMatrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

// Uniform in [-b, b] with b = sqrt(6 / (fan_in + fan_out)).
inline DenseMatrix glorot_uniform(Rng& rng, Index rows, Index cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    DenseMatrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return m;
}

}  // namespace aglsc
