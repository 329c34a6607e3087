#pragma once

#include <string>
#include <vector>

#include "hypood/encoder.hpp"
#include "hypood/trainer.hpp"

namespace hypood {

struct DataConfig {
    std::string source = "synthetic";  // synthetic | csv

    // synthetic source
    int classes = 4;
    int train_per_class = 400;
    int test_per_class = 100;
    int input_dim = 16;
    double separation = 5.0;
    double noise_sigma = 0.5;
    std::vector<std::string> ood_modes = {"between"};
    int ood_samples = 400;
    double ood_noise_sigma = 0.5;
    uint64_t seed = 7;

    // csv source
    std::string train_csv;
    std::string test_csv;
    std::vector<std::pair<std::string, std::string>> ood_csv;  // set name -> path
};

struct EvalConfig {
    std::vector<std::string> scorers = {"mahalanobis", "max_cosine", "msp"};
    uint64_t subsample_seed = 99;
    std::string feature_space = "projection";    // projection | penultimate
    std::string separability = "angles";         // angles | cosine
    std::string compactness = "literal";         // literal | per_class
    std::string prototype_source = "empirical";  // empirical | ema
};

struct ExperimentConfig {
    DataConfig data;
    MlpSpec model;
    bool model_input_dim_auto = true;
    TrainConfig train;
    EvalConfig eval;
    std::string output_dir = "out";

    void validate() const;
};

// INI-style config: sections [data] [model] [train] [eval] [output],
// key = value lines, '#'/';' comments. Unknown sections or keys raise
// ConfigError naming the offending field.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source_name);
ExperimentConfig load_experiment_config(const std::string& path);

// Every key materialized, fixed order, floats at 17 significant digits; the
// snapshot re-parses to an identical configuration.
std::string resolved_config_ini(const ExperimentConfig& cfg);

}  // namespace hypood
