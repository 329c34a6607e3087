#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hypood/numerics.hpp"
#include "hypood/prototypes.hpp"

namespace hypood {

enum class LossKind {
    Cider,
    CompOnly,
    DisOnly,
    CrossEntropy,
    SupCon,
    Triple,       // ce + dispersion + compactness
    SupConCider,  // supcon + dispersion + compactness
};

LossKind parse_loss_kind(const std::string& name);
std::string loss_kind_name(LossKind kind);
bool loss_uses_prototypes(LossKind kind);
bool loss_uses_classifier(LossKind kind);

struct LossConfig {
    LossKind kind = LossKind::Cider;
    double tau = 0.1;
    double lambda_c = 2.0;
    double lambda_d = 1.0;
    // The printed compactness loss sums over the batch; mean reduction keeps
    // the learning-rate transferable across batch sizes.
    bool mean_reduce = true;
    bool detach_prototypes = false;

    void validate() const;
};

struct LossOutput {
    double value = 0.0;
    Mat grad_z;                      // b x d
    Mat grad_proto;                  // C x d
    std::optional<Mat> grad_logits;  // b x C, cross-entropy only
};

// (1/C) sum_i log[ (1/(C-1)) sum_{j != i} exp(mu_i . mu_j / tau) ].
// Log-sum-exp is max-shifted. grad_proto accounts for each prototype
// appearing both as anchor and as the others' neighbor.
LossOutput dispersion_loss(const PrototypeBank& bank, double tau);

// -sum_i log softmax(z_i . mu / tau)_{c(i)}; divided by the batch size when
// mean_reduce is set.
LossOutput compactness_loss(const Mat& z_batch, const std::vector<int>& labels,
                            const PrototypeBank& bank, double tau, bool mean_reduce);

// lambda_d * dispersion + lambda_c * compactness; gradients combine linearly.
LossOutput cider_loss(const Mat& z_batch, const std::vector<int>& labels,
                      const PrototypeBank& bank, const LossConfig& config);

// Mean over the batch of -log softmax(logits)_{y_i}.
LossOutput cross_entropy_loss(const Mat& logits, const std::vector<int>& labels);

// Multi-view supervised contrastive loss, sum over positives outside the
// log. Throws NoPositives when an anchor has no same-label partner.
LossOutput supcon_loss(const Mat& z_views, const std::vector<int>& labels, double tau);

// Dispatch on config.kind; `logits` is required for cross-entropy kinds.
LossOutput combined_loss(const Mat& z_batch, const std::vector<int>& labels,
                         const PrototypeBank& bank, const Mat* logits, const LossConfig& config);

}  // namespace hypood
