#pragma once

// Counter-based random streams (splitmix64). Every source of randomness in
// the project flows from one root seed, split into named streams so that
// e.g. theta-row draws and environment dynamics never share a counter.
// Streams can be derived per episode, which keeps concurrent rollouts
// deterministic.

#include <cmath>
#include <cstdint>
#include <string_view>

#include "shm/matrix.hpp"

namespace shm {

namespace detail {

inline std::uint64_t splitmix_mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace detail

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : base_(seed), counter_(0) {}

    static Rng stream(std::uint64_t root_seed, std::string_view name) {
        return Rng(detail::splitmix_mix(root_seed ^ detail::fnv1a(name)));
    }

    // Independent substream (e.g. one per episode). Does not advance *this.
    Rng derive(std::uint64_t salt) const {
        return Rng(detail::splitmix_mix(base_ ^ (salt * 0xD1342543DE82EF95ull + 0x9E3779B97F4A7C15ull)));
    }

    std::uint64_t next_u64() {
        counter_ += 1;
        return detail::splitmix_mix(base_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    std::uint64_t draws_consumed() const { return counter_; }

    // one draw, [0, 1)
    real uniform() { return static_cast<real>((next_u64() >> 11) * (1.0 / 9007199254740992.0)); }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // one draw, unbiased-enough multiply-shift over [0, n)
    std::uint32_t uniform_int(std::uint32_t n) {
        return static_cast<std::uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Box-Muller, always exactly two draws (no cached spare, so replay stays simple).
    real normal() {
        double u1 = ((next_u64() >> 11) + 1) * (1.0 / 9007199254740992.0);  // (0, 1]
        double u2 = (next_u64() >> 11) * (1.0 / 9007199254740992.0);
        return static_cast<real>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2));
    }

    Vec normal_vec(std::size_t n) {
        Vec v(n);
        for (auto& x : v) x = normal();
        return v;
    }

  private:
    std::uint64_t base_;
    std::uint64_t counter_;
};

}  // namespace shm
