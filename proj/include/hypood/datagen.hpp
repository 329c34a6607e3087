#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hypood/numerics.hpp"
#include "hypood/rng.hpp"

namespace hypood {

struct LabeledDataset {
    Mat features;  // n x D
    std::vector<int> labels;
    int num_classes = 0;
    std::string name;

    size_t size() const { return features.rows; }
    size_t dim() const { return features.cols; }
};

struct UnlabeledDataset {
    Mat features;  // m x D
    std::string name;

    size_t size() const { return features.rows; }
    size_t dim() const { return features.cols; }
};

enum class OodMode { Between, Heldout, Uniform };

OodMode parse_ood_mode(const std::string& name);
std::string ood_mode_name(OodMode mode);

// Class means are sampled uniformly on the radius-`separation` sphere with
// pairwise rejection keeping every mean-mean angle >= 2*pi/(3C). Samples are
// mean + isotropic Gaussian noise. Labels come out class-blocked.
LabeledDataset make_blobs(int num_classes, int n_per_class, int input_dim, double separation,
                          double noise_sigma, uint64_t seed);

// between: midpoints of random distinct class-mean pairs plus noise.
// heldout: a fresh blob whose mean direction is at least the ID minimum
//          inter-mean angle away from every ID mean.
// uniform: uniform in the bounding box of the ID features.
// Class means are the empirical per-class means of `id`.
UnlabeledDataset make_ood(const LabeledDataset& id, OodMode mode, int m, double noise_sigma,
                          uint64_t seed);

// Two independent views: (uniform scale in [lo, hi]) * x + Gaussian noise.
std::pair<Vec, Vec> augment(std::span<const double> x, double noise_sigma, double scale_lo,
                            double scale_hi, Rng& rng);

// CSV formats are bit-exact: UTF-8, comma-separated, LF endings, floats at
// 17 significant digits, header feature_0,...,feature_{D-1}[,label].
void save_csv(const std::string& path, const LabeledDataset& dataset);
void save_csv(const std::string& path, const UnlabeledDataset& dataset);
LabeledDataset load_labeled_csv(const std::string& path);
UnlabeledDataset load_unlabeled_csv(const std::string& path);

// Empirical per-class means of the raw features; rows indexed by class.
Mat class_feature_means(const LabeledDataset& id);

// Deterministic subsample without replacement to at most `max_size` rows.
UnlabeledDataset subsample(const UnlabeledDataset& set, size_t max_size, uint64_t seed);

std::string format_double17(double x);

}  // namespace hypood
