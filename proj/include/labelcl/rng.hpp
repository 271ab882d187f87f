#pragma once

#include <cmath>
#include <cstdint>

namespace labelcl {

// Deterministic generator: SplitMix64 (Steele, Lea, Flood 2014).
//
// State is a single 64-bit word; next() is the reference sequence
//   s += 0x9E3779B97F4A7C15
//   z = s; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// Derived draws are fixed so two implementations seeded identically produce
// bit-identical streams at equal precision:
//   uniform()  = next() >> 11, scaled by 2^-53      -> double in [0, 1)
//   normal()   = Box-Muller cosine branch from exactly two uniforms:
//                sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
// All draws are computed in double and cast by the caller if needed.
class RngState {
public:
    explicit RngState(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal; consumes exactly two uniforms (the sine branch is discarded).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Integer in [0, n), via rejection-free modulo of the high bits. Used for shuffles;
    // the tiny modulo bias is irrelevant at dataset sizes and keeps the stream simple.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    uint64_t raw_state() const { return state_; }
    void set_raw_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

// Stable mixing of a seed with a stream index (epoch number, class id, ...).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    RngState r(seed ^ (0x632BE59BD9B4E019ULL * (stream + 1)));
    return r.next_u64();
}

} // namespace labelcl
