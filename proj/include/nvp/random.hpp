#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "nvp/tensor.hpp"

namespace nvp {

/// Seeded random stream. All randomness in the library flows through this
/// class so that every run is a pure function of its seeds. Normal draws use
/// Box-Muller on top of the raw 64-bit stream, which keeps the sequence
/// independent of the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return static_cast<int64_t>(v % un);
    }

    // Standard normal draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log(u1) is finite.
        double u1 = static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Tensor normal_tensor(Shape shape, double stddev = 1.0, double mean = 0.0) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) {
            t[i] = static_cast<real_t>(mean + stddev * normal());
        }
        return t;
    }

    Tensor uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) {
            t[i] = static_cast<real_t>(uniform(lo, hi));
        }
        return t;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Mixes a base seed with a stream tag and step index. Used to derive
// independent per-step streams so training can resume from a checkpoint
// without serializing generator state.
uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t step);

}  // namespace nvp
