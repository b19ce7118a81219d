#pragma once

#include <cstdint>
#include <random>

namespace alm {

// Fixed generator for every stochastic step in the library:
//   engine   std::mt19937_64 seeded with the 64-bit seed
//   uniform  (next() >> 11) * 2^-53, in [0, 1)
//   normal   Box-Muller on (1 - u1, u2): r = sqrt(-2 ln(1 - u1)),
//            yields r*cos(2*pi*u2) then r*sin(2*pi*u2)
// std::*_distribution is avoided because its output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double normal();
    // Uniform integer in [0, n) by rejection sampling; n must be > 0.
    std::uint64_t below(std::uint64_t n);

    template <class Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace alm
