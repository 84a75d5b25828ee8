#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace mvmcad {

// Deterministic RNG: mt19937_64 with hand-rolled distributions so that
// streams are identical across standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0)
        : engine_(seed), state_hash_(seed ^ 0x2545f4914f6cdd1dULL) {}

    std::uint64_t next_u64() { return engine_(); }

    double uniform() {  // [0, 1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_index(std::uint64_t n) { return engine_() % n; }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    // Derives an independent stream; used to give each (sample, view) its
    // own deterministic generator.
    Rng fork(std::uint64_t salt) const {
        std::uint64_t h = state_hash_ ^ (salt + 0x9e3779b97f4a7c15ULL + (state_hash_ << 6));
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdULL;
        h ^= h >> 33;
        return Rng(h);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << " " << (has_spare_ ? 1 : 0) << " ";
        os.precision(17);
        os << spare_ << " " << state_hash_;
        return os.str();
    }

    static Rng deserialize(const std::string& s) {
        Rng r;
        std::istringstream is(s);
        int spare_flag = 0;
        is >> r.engine_ >> spare_flag >> r.spare_ >> r.state_hash_;
        r.has_spare_ = spare_flag != 0;
        return r;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
    std::uint64_t state_hash_ = 0x2545f4914f6cdd1dULL;
};

}  // namespace mvmcad
