#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

// Deterministic seeding and sampling. Every random draw in the workbench
// goes through Rng so that runs are reproducible bit-for-bit from a single
// global seed, independent of the standard library's distribution
// implementations.
namespace abw {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stage seeds are derived from the global seed and a stable text label
// (FNV-1a over the label, mixed through splitmix64). Changing the label
// decorrelates the stream; same label always gives the same seed.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::uint64_t s = global_seed ^ h;
    splitmix64(s);
    return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label,
                                 std::uint64_t a) {
    return derive_seed(global_seed, std::string(label) + "/" + std::to_string(a));
}

inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label,
                                 std::uint64_t a, std::uint64_t b) {
    return derive_seed(global_seed,
                       std::string(label) + "/" + std::to_string(a) + "/" + std::to_string(b));
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, one spare cached
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * double(n)) % n;
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace abw
