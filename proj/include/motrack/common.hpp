#pragma once

// Shared small utilities: shapes, error reporting, deterministic RNG.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace motrack {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

// Runtime toggles. check_finite enables the checked-mode scan for NaN/Inf
// on every op result; off by default because it touches every element.
// shadow_double makes every op additionally evaluate in float64 alongside
// the float32 path (used by finite-difference oracles, which would
// otherwise be limited by float32 quantization of the loss).
struct RuntimeConfig {
    inline static bool check_finite = false;
    inline static bool shadow_double = false;
};

// Deterministic RNG. mt19937 plus hand-rolled Box-Muller so that the
// produced stream depends only on the engine state (no cached spare,
// no libstdc++-specific distribution internals beyond the engine).
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(static_cast<uint32_t>(seed ^ (seed >> 32)) ^ 0x9e3779b9u) {}

    double uniform() {  // [0,1)
        return eng_() * (1.0 / 4294967296.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = (static_cast<double>(eng_()) + 1.0) * (1.0 / 4294967296.0);
        double u2 = eng_() * (1.0 / 4294967296.0);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // integer in [lo, hi)
    int64_t integer(int64_t lo, int64_t hi) {
        if (hi <= lo) return lo;
        return lo + static_cast<int64_t>(eng_() % static_cast<uint32_t>(hi - lo));
    }

    std::string state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (!is) fail("Rng::set_state: malformed engine state string");
    }

private:
    std::mt19937 eng_;
};

inline double softplus_d(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// inverse of softplus, useful for initializing unconstrained parameters
inline double inv_softplus_d(double y) {
    return std::log(std::expm1(y));
}

}  // namespace motrack
