#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hypood/config.hpp"
#include "hypood/datagen.hpp"
#include "hypood/evaluation.hpp"
#include "hypood/trainer.hpp"

namespace hypood {

struct ResolvedData {
    LabeledDataset id_train;
    LabeledDataset id_test;
    // Subsampled to at most |id_test| rows each, in config order.
    std::vector<UnlabeledDataset> ood_sets;
};

// Generates synthetic data (ID train/test split share one set of class
// means) or loads the configured CSVs. Never mutates input files.
ResolvedData resolve_data(const ExperimentConfig& cfg);

// Embeddings in the configured evaluation feature space: normalized
// projection outputs by default, or normalized penultimate features.
Mat eval_embeddings(const EvalConfig& eval, const Weights& weights, const MlpSpec& spec,
                    const Mat& features);

struct EvalOutputs {
    DetectionReport report;
    std::vector<std::pair<std::string, ScoreSet>> scores;  // per scorer
    PrototypeBank eval_bank;
    ProbeResult probe;
    Mat id_train_z;
    Mat id_test_z;
    std::vector<Mat> ood_z;
};

// Probe + prototype bank + covariance + all configured scorers over every
// OOD set. `ema_bank` is consulted only when eval.prototype_source == "ema".
EvalOutputs evaluate_experiment(const ExperimentConfig& cfg, const ResolvedData& data,
                                const Weights& weights, const MlpSpec& spec,
                                const PrototypeBank* ema_bank);

struct RunArtifacts {
    std::string out_dir;
    std::string checkpoint_path;
    std::string history_path;
    std::vector<std::pair<std::string, std::string>> scores_paths;  // scorer -> path
    std::string embeddings_path;
    std::string report_path;
    std::string resolved_config_path;
    DetectionReport report;
};

// End to end: resolve data, train, probe, evaluate, write every artifact.
// Files land in a temp directory that is renamed into place, so a failed
// run leaves nothing behind. Fails if out_dir already exists.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// CSV: sample_index,set_name,label,z_0..z_{d-1}; ID rows carry class
// labels, OOD rows -1.
void save_embeddings_csv(const std::string& path, const ResolvedData& data,
                         const EvalOutputs& outputs);

struct SweepPoint {
    double value = 0.0;
    bool failed = false;
    std::string error;
    DetectionReport report;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::string summary_path;
};

// Runs one experiment per value (everything else identical), writing each
// into <out_dir>/<axis>_<index> and a summary CSV with one row per
// (value, ood_set, scorer). A failed point is recorded and the sweep
// continues. HYPOOD_THREADS caps the number of concurrent points.
SweepResult sweep(const ExperimentConfig& base, const std::string& axis,
                  const std::vector<double>& values, const std::string& out_dir);

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, const std::string& axis,
                                   double value);

}  // namespace hypood
