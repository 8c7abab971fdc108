#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace bridgefov {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Order-sensitive key derivation: derive_seed(s, a, b) != derive_seed(s, b, a).
template <class... Ts>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Ts... parts) {
    std::uint64_t h = splitmix64(seed);
    ((h = splitmix64(h ^ (static_cast<std::uint64_t>(parts) + 0x632BE59BD9B4E019ull))), ...);
    return h;
}

/// Counter-based generator: the stream is a pure function of the key, so
/// per-pixel draws are independent of evaluation order and thread count.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit constexpr CounterRng(std::uint64_t key) : key_(splitmix64(key)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

    /// Uniform in the open interval (0, 1).
    double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>((*this)() % span);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// One standard normal per key.
inline double standard_normal(std::uint64_t key) { return CounterRng(key).normal(); }

}  // namespace bridgefov
