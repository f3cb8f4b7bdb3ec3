#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dlm {

// Deterministic splittable RNG. A stream is identified by a 64-bit key;
// split() derives an independent child stream from the parent key (not from
// the draw position), so the substream layout is stable no matter how many
// values were consumed from the parent.
class SplitRng {
  public:
    explicit SplitRng(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), state_(key_) {}

    SplitRng split(uint64_t index) const { return SplitRng(mix(key_ + 0x8f1bbcdcbfa53e0bull * (index + 1)), 0); }

    SplitRng split(std::string_view name) const {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (char c : name) {
            h = (h ^ static_cast<uint8_t>(c)) * 0x100000001b3ull;
        }
        return SplitRng(mix(key_ ^ h), 0);
    }

    uint64_t next_u64() {
        // splitmix64
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // standard normal via Box-Muller (fixed draw order for determinism)
    double gaussian() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

  private:
    SplitRng(uint64_t key, int) : key_(key), state_(key) {}

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdull;
        z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ull;
        return z ^ (z >> 33);
    }

    uint64_t key_;
    uint64_t state_;
};

}  // namespace dlm
