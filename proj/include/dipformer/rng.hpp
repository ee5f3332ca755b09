#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dip {

// All randomness flows through this wrapper. std::uniform_real_distribution
// and std::normal_distribution are implementation-defined, so byte-identical
// artifacts across toolchains require building both from raw mt19937_64 bits.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    // Uniform in [0, 1): 53 mantissa bits, the usual ldexp construction.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is < 2^-50 for any n we use
    // (n < 2^14 everywhere); not worth a rejection loop.
    uint64_t below(uint64_t n) { return eng_() % n; }

    int range_int(int lo, int hi) {  // inclusive ends
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    bool coin(double p = 0.5) { return uniform() < p; }

    // Standard normal via Box-Muller. One value per call; the pair's second
    // half is deliberately discarded so the stream position is predictable.
    double normal() {
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Truncated normal used by weight init: resample outside +-2 sigma.
    double trunc_normal(double mean, double stddev) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return mean + stddev * z;
        }
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace dip
