#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hypood/numerics.hpp"
#include "hypood/prototypes.hpp"
#include "hypood/rng.hpp"

namespace hypood {

// Encoder f: R^D -> R^e (relu after every layer), projection head
// h: R^e -> R^d (relu on hidden projection layers, none on the output),
// followed by L2 normalization onto the unit sphere.
struct MlpSpec {
    int input_dim = 16;
    std::vector<int> hidden_dims = {64, 64};
    int penultimate_dim = 64;
    std::vector<int> proj_hidden_dims = {};  // empty -> linear head
    int proj_dim = 16;
    std::string activation = "relu";

    // Layer output sizes in forward order: hidden..., e, proj_hidden..., d.
    std::vector<int> layer_dims() const;
    size_t encoder_layer_count() const { return hidden_dims.size() + 1; }
    size_t layer_count() const { return encoder_layer_count() + proj_hidden_dims.size() + 1; }
    void validate() const;
    bool operator==(const MlpSpec&) const = default;
};

struct Layer {
    Mat w;  // out x in
    Vec b;  // out
};

struct Weights {
    std::vector<Layer> layers;
    // Bumped on every optimizer step; caches remember the version they were
    // computed against so a stale backward is caught instead of silently
    // producing garbage gradients.
    uint64_t version = 0;
};

struct WeightGrads {
    std::vector<Layer> layers;  // same shapes as the weights
};

struct ForwardCache {
    Vec input;
    std::vector<Vec> pre;   // per layer, before activation
    std::vector<Vec> post;  // per layer, after activation
    Vec z_tilde;            // pre-normalization embedding (== post.back())
    double z_tilde_norm = 0.0;
    Vec z;  // unit
    uint64_t weights_version = 0;
};

struct ForwardResult {
    Vec penultimate;
    Vec z;
    ForwardCache cache;
};

// Kaiming fan-in init: w ~ N(0, 2/fan_in), biases zero.
Weights init_weights(const MlpSpec& spec, uint64_t seed);

WeightGrads zero_grads(const MlpSpec& spec);

ForwardResult forward(const Weights& weights, const MlpSpec& spec, std::span<const double> x);

struct BackwardResult {
    WeightGrads grads;
    Vec input_grad;
};

// Exact chain rule, including the normalization Jacobian
// (I - z z^T)/||z_tilde||. dL_dpenultimate (may be empty) is injected at the
// encoder/projection boundary for losses that also read the penultimate
// features.
BackwardResult backward(const Weights& weights, const MlpSpec& spec, const ForwardCache& cache,
                        std::span<const double> dL_dz, std::span<const double> dL_dpenultimate = {});

void accumulate(WeightGrads& into, const WeightGrads& delta);

// ---- checkpoint document ------------------------------------------------
// Single JSON document: {"format_version": 1, "spec": {...}, "weights":
// [{"w": [[...]], "b": [...]}, ...], "prototypes": {...}?, "rng_state": ...?}
// with floats at 17 significant digits.

struct Checkpoint {
    MlpSpec spec;
    Weights weights;
    std::optional<PrototypeBank> prototypes;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
// Throws SchemaError when the stored spec differs from the expected one.
Checkpoint load_checkpoint(const std::string& path, const MlpSpec& expected_spec);

// ---- gradient checking ---------------------------------------------------

// Scalar loss over the weights; fills *grads with the analytic gradient when
// grads is non-null. The value path must not depend on whether grads are
// requested.
using LossWithGrad = std::function<double(const Weights&, WeightGrads* grads)>;

struct GradCheckReport {
    double worst_rel_error = 0.0;
    size_t coords_checked = 0;
    size_t worst_layer = 0;
    size_t worst_index = 0;  // flat index within the layer (w first, then b)
};

// Central differences on up to max_coords weight coordinates (seeded
// subsample). Per-coordinate error is |analytic - fd| scaled by
// max(1, |analytic|, |fd|), so near-zero coordinates are compared
// absolutely instead of amplifying finite-difference roundoff.
GradCheckReport grad_check(const Weights& weights, const LossWithGrad& fn, double step,
                           size_t max_coords, uint64_t seed);

}  // namespace hypood
