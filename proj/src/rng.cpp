#include "hypood/rng.hpp"

#include <cmath>

#include "hypood/errors.hpp"

namespace hypood {

namespace {

inline uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(uint64_t seed) : seed_(seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + uniform01() * (hi - lo);
}

uint64_t Rng::bounded(uint64_t n) {
    if (n == 0) throw InvalidParam("Rng::bounded: n must be positive");
    const uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] so log is finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

std::vector<double> Rng::unit_vector(int dim) {
    if (dim < 1) throw InvalidParam("Rng::unit_vector: dim must be >= 1");
    std::vector<double> v(static_cast<size_t>(dim));
    double norm2 = 0.0;
    // Degenerate draws (all coordinates ~0) are retried.
    do {
        norm2 = 0.0;
        for (auto& x : v) {
            x = normal();
            norm2 += x * x;
        }
    } while (norm2 < 1e-24);
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

Rng Rng::derive(uint64_t a, uint64_t b, uint64_t c) const {
    uint64_t s = seed_;
    uint64_t h = splitmix64(s);
    s ^= a;
    h ^= splitmix64(s);
    s ^= b;
    h ^= splitmix64(s);
    s ^= c;
    h ^= splitmix64(s);
    return Rng(h);
}

}  // namespace hypood
