#pragma once

#include <map>
#include <string>
#include <vector>

#include "hypood/numerics.hpp"
#include "hypood/prototypes.hpp"
#include "hypood/trainer.hpp"

namespace hypood {

// Score convention everywhere: higher = more in-distribution.
struct ScoreSet {
    std::vector<double> id_scores;
    std::vector<std::pair<std::string, std::vector<double>>> ood_scores;

    const std::vector<double>& ood(const std::string& name) const;
};

struct MetricValue {
    double cosine = 0.0;
    double degrees = 0.0;
};

// Mean pairwise prototype cosine over ordered pairs i != j, reported also
// as arccos in degrees (higher degrees = more dispersed).
MetricValue dispersion_metric(const PrototypeBank& bank);

enum class CompactnessForm {
    // Mean over samples of z_i . mu_{y_i}; classes weighted by size.
    Literal,
    // Per-class mean cosine, then averaged over classes.
    PerClassMean,
};

MetricValue compactness_metric(const Mat& embeddings, const std::vector<int>& labels,
                               const PrototypeBank& bank, CompactnessForm form);

enum class SeparabilityForm {
    // Mean nearest-prototype angle of OOD minus that of ID, in degrees;
    // positive when OOD sits farther from every prototype.
    MeanAngles,
    // Raw cosine difference mean_ood(max_j cos) - mean_id(max_j cos);
    // negative when detection is easy.
    RawCosine,
};

double separability_metric(const Mat& id_embeddings, const Mat& ood_embeddings,
                           const PrototypeBank& bank,
                           SeparabilityForm form = SeparabilityForm::MeanAngles);

// Negated minimum class-conditional Mahalanobis distance under the shared
// covariance factor.
double mahalanobis_score(std::span<const double> z, const PrototypeBank& bank,
                         const CholeskyFactor& sigma_factor);

double max_cosine_score(std::span<const double> z, const PrototypeBank& bank);

// Maximum softmax probability of the probe on penultimate features.
double msp_score(const LinearProbe& probe, std::span<const double> penultimate);

// Largest threshold keeping at least 95% of ID scores on the ID side
// (exact order statistic, no interpolation). Requires >= 20 ID scores.
double fpr95_threshold(const std::vector<double>& id_scores);
double fpr_at_95tpr(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

// Mann-Whitney AUROC with midrank tie handling.
double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

enum class Decision { Id, Ood };

// ID iff score >= lambda.
Decision decide(double score, double lambda);

// ---- report document -------------------------------------------------------

struct OodSetReport {
    std::string name;
    double separability_deg = 0.0;
    // scorer name -> {fpr95, auroc}
    std::vector<std::pair<std::string, std::pair<double, double>>> scorers;
};

struct DetectionReport {
    std::vector<std::string> scorer_names;
    std::string checkpoint_id;
    uint64_t train_seed = 0;
    uint64_t data_seed = 0;
    uint64_t subsample_seed = 0;
    double dispersion_deg = 0.0;
    double compactness_deg = 0.0;
    double probe_accuracy = 0.0;
    std::vector<OodSetReport> ood_sets;
};

// Deterministic JSON document, floats at 17 significant digits.
std::string report_to_json(const DetectionReport& report);
void save_report(const std::string& path, const DetectionReport& report);
DetectionReport load_report(const std::string& path);

// Aligned table mirroring the usual FPR/AUROC-per-OOD-set layout.
std::string format_report_table(const DetectionReport& report);

// CSV: sample_index,set_name,score (one file per scorer).
void save_scores_csv(const std::string& path, const ScoreSet& scores,
                     const std::string& id_set_name = "id_test");
ScoreSet load_scores_csv(const std::string& path, const std::string& id_set_name = "id_test");

}  // namespace hypood
