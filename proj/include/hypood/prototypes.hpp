#pragma once

#include <optional>
#include <vector>

#include "hypood/numerics.hpp"

namespace hypood {

struct MlpSpec;
struct Weights;
struct LabeledDataset;
class Rng;

// C unit-norm class prototypes with EMA state. Single-writer: updates
// require exclusive access; metric reads may run on a snapshot.
struct PrototypeBank {
    Mat mu;  // C x d, unit rows
    double alpha = 0.95;
    std::vector<long> update_count;

    int num_classes() const { return static_cast<int>(mu.rows); }
    int dim() const { return static_cast<int>(mu.cols); }
};

// Jacobians of one EMA update mu' = normalize(alpha*mu + (1-alpha)*z).
// Both are scaled projectors; apply() uses their symmetric closed form
// s * (g - (mu' . g) mu') / ||v|| rather than materializing d x d matrices.
struct EmaJacobian {
    Vec mu_new;     // unit
    double v_norm;  // ||alpha*mu + (1-alpha)*z||
    double alpha;

    Vec apply_wrt_z(std::span<const double> upstream) const;
    Vec apply_wrt_mu(std::span<const double> upstream) const;
};

// mu_c = l2_normalize(mean of embeddings over class-c samples), where the
// embedding is the normalized projection output of the encoder.
PrototypeBank init_from_data(const Weights& weights, const MlpSpec& spec,
                             const LabeledDataset& dataset, double alpha);

// Unit-normalized Gaussian rows; seeded.
PrototypeBank init_random(int num_classes, int dim, double alpha, Rng& rng);

// Applies mu_c <- l2_normalize(alpha*mu_c + (1-alpha)*z). alpha == 1 is an
// exact no-op so frozen-prototype runs stay bit-identical. Returns the
// update Jacobians when differentiable is set.
std::optional<EmaJacobian> ema_update(PrototypeBank& bank, std::span<const double> z,
                                      int class_id, bool differentiable);

}  // namespace hypood
