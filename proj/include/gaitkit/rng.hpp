#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace gaitkit {

// splitmix64, used to derive independent child seeds from a root seed.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic RNG. mt19937_64 is fully specified by the standard and the
// value mappings below avoid std::*_distribution, whose output is
// implementation-defined; streams replay identically across builds.
// Child streams are derived by tag splitting from the construction seed,
// never by sharing engine state, so worker parallelism and consumption
// order cannot change the values another stream sees.
class Rng {
  public:
    explicit Rng(uint64_t seed) : key_(splitmix64(seed)), eng_(key_) {}

    Rng split(uint64_t tag) const {
        return Rng(key_ ^ splitmix64(tag ^ 0x5851f42d4c957f2dULL));
    }
    Rng split(std::string_view name, uint64_t tag = 0) const {
        return Rng(key_ ^ hash_str(name) ^ splitmix64(tag));
    }

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        // rejection sampling to kill modulo bias
        if (n == 0) return 0;
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

  private:
    uint64_t key_;
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace gaitkit
