#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hypood/datagen.hpp"
#include "hypood/encoder.hpp"
#include "hypood/objectives.hpp"
#include "hypood/prototypes.hpp"

namespace hypood {

enum class LrSchedule { Cosine, Constant };
enum class PrototypeUpdateMode { PerSample, PerBatch, Frozen };
enum class PrototypeInit { FromData, Random };

LrSchedule parse_schedule(const std::string& name);
PrototypeUpdateMode parse_prototype_update(const std::string& name);
PrototypeInit parse_prototype_init(const std::string& name);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 128;
    double lr0 = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    LrSchedule schedule = LrSchedule::Cosine;
    uint64_t seed = 1;
    double prototype_alpha = 0.95;
    PrototypeUpdateMode prototype_update = PrototypeUpdateMode::PerSample;
    PrototypeInit prototype_init = PrototypeInit::FromData;
    LossConfig loss;

    double augment_noise_sigma = 0.1;
    double augment_scale_lo = 0.9;
    double augment_scale_hi = 1.1;

    double probe_l2 = 1e-4;
    int probe_iters = 500;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double dispersion_deg = 0.0;
    double compactness_deg = 0.0;
    double seconds = 0.0;
};

using TrainHistory = std::vector<EpochStats>;

// CSV: epoch,loss,lr,dispersion_deg,compactness_deg,seconds
void save_history_csv(const std::string& path, const TrainHistory& history);

// Linear map logits = w * features + b; used both as the cross-entropy head
// during joint training and as the post-hoc probe.
struct LinearClassifier {
    Mat w;  // C x feature_dim
    Vec b;  // C

    Vec logits(std::span<const double> features) const;
};

struct LinearProbe {
    LinearClassifier classifier;
    std::string feature_space = "penultimate";
};

// lr0 * 0.5 * (1 + cos(pi * t / T)).
double cosine_lr(long step, long total_steps, double lr0);

// g' = grad + weight_decay * w; v <- momentum * v + g'; w <- w - lr * v.
void sgd_step(Weights& weights, const WeightGrads& grads, WeightGrads& momentum_state, double lr,
              double momentum, double weight_decay);
void sgd_step(LinearClassifier& cls, const Mat& w_grad, const Vec& b_grad,
              LinearClassifier& momentum_state, double lr, double momentum, double weight_decay);

// One augmented batch: forwards every view, applies the configured EMA
// prototype updates to `bank`, evaluates the loss, and (optionally)
// backpropagates. Unless detach_prototypes is set, prototype gradients are
// chained through the recorded EMA Jacobians back into the view embeddings.
// `classifier` must be non-null for cross-entropy kinds.
struct BatchGradients {
    double loss = 0.0;
    WeightGrads weight_grads;
    Mat classifier_w_grad;
    Vec classifier_b_grad;
};

BatchGradients process_batch(const Weights& weights, const MlpSpec& spec,
                             const LinearClassifier* classifier, const Mat& views,
                             const std::vector<int>& view_labels, PrototypeBank& bank,
                             const LossConfig& loss_cfg, PrototypeUpdateMode update_mode,
                             bool want_grads);

struct StepInfo {
    int epoch;
    long step;
    double loss;
    double lr;
    const PrototypeBank& bank;
    const Mat& view_embeddings;
};

using StepObserver = std::function<void(const StepInfo&)>;

struct TrainResult {
    Weights weights;
    PrototypeBank bank;
    TrainHistory history;
    LinearClassifier classifier;  // valid only when the loss kind uses one
    bool has_classifier = false;
};

// Runs the full first-stage loop: seeded shuffle, two-view augmentation,
// per-view EMA updates in batch order, configured loss, SGD step with the
// scheduled learning rate. Prototypes are initialized before epoch 1;
// epochs == 0 returns the weights unchanged.
TrainResult train(Weights weights, const MlpSpec& spec, const LabeledDataset& dataset,
                  const TrainConfig& config, const StepObserver& observer = {});

// Multinomial logistic regression on frozen features by full-batch gradient
// descent (step 0.1). Returns held-out accuracy on a seeded 80/20 split.
struct ProbeResult {
    LinearProbe probe;
    double heldout_accuracy = 0.0;
};

ProbeResult train_linear_probe(const Mat& features, const std::vector<int>& labels,
                               int num_classes, double l2_penalty, int max_iters, uint64_t seed);

// Normalized projection embeddings (rows) for a feature matrix.
Mat embed_all(const Weights& weights, const MlpSpec& spec, const Mat& features);
// Penultimate features (rows).
Mat penultimate_all(const Weights& weights, const MlpSpec& spec, const Mat& features);

}  // namespace hypood
