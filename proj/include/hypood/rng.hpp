#pragma once

#include <cstdint>
#include <vector>

namespace hypood {

// xoshiro256++ with splitmix64 seeding. Chosen over std:: distributions
// because the standard does not pin down distribution algorithms, and every
// experiment here must be bit-reproducible across platforms.
//
// Substreams are derived by mixing the parent seed with stream labels
// through splitmix64, so independent consumers (shuffle, augmentation,
// init, ...) never share a stream.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01();

    double uniform(double lo, double hi);

    // Uniform integer in [0, n); n must be > 0. Unbiased (rejection).
    uint64_t bounded(uint64_t n);

    // Standard normal via Box-Muller; the spare value is cached, so the
    // sequence depends only on the call order.
    double normal();

    double normal(double mean, double stddev);

    // Uniformly distributed direction on the unit sphere in R^d.
    std::vector<double> unit_vector(int dim);

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent substream labelled by up to three words.
    Rng derive(uint64_t a, uint64_t b = 0, uint64_t c = 0) const;

  private:
    uint64_t state_[4];
    uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

uint64_t splitmix64(uint64_t& state);

}  // namespace hypood
