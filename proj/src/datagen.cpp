#include "hypood/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hypood/errors.hpp"

namespace hypood {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr int kMaxRejectionAttempts = 100000;

double angle_between(std::span<const double> a, std::span<const double> b) {
    const double c = std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
    return std::acos(c);
}

// Directions on the sphere with every pairwise angle >= min_angle.
std::vector<Vec> sample_separated_directions(int count, int dim, double min_angle, Rng& rng) {
    std::vector<Vec> dirs;
    dirs.reserve(static_cast<size_t>(count));
    int attempts = 0;
    while (static_cast<int>(dirs.size()) < count) {
        if (++attempts > kMaxRejectionAttempts)
            throw InvalidParam("make_blobs: could not place " + std::to_string(count) +
                               " class means at the required angular separation in dim " +
                               std::to_string(dim));
        Vec cand = rng.unit_vector(dim);
        bool ok = true;
        for (const auto& d : dirs) {
            if (angle_between(cand, d) < min_angle) {
                ok = false;
                break;
            }
        }
        if (ok) dirs.push_back(std::move(cand));
    }
    return dirs;
}

}  // namespace

OodMode parse_ood_mode(const std::string& name) {
    if (name == "between") return OodMode::Between;
    if (name == "heldout") return OodMode::Heldout;
    if (name == "uniform") return OodMode::Uniform;
    throw InvalidParam("unknown OOD mode: " + name);
}

std::string ood_mode_name(OodMode mode) {
    switch (mode) {
        case OodMode::Between: return "between";
        case OodMode::Heldout: return "heldout";
        case OodMode::Uniform: return "uniform";
    }
    return "?";
}

LabeledDataset make_blobs(int num_classes, int n_per_class, int input_dim, double separation,
                          double noise_sigma, uint64_t seed) {
    if (num_classes < 2) throw InvalidParam("make_blobs: need at least 2 classes");
    if (input_dim < 2) throw InvalidParam("make_blobs: need input_dim >= 2");
    if (n_per_class < 1) throw InvalidParam("make_blobs: need n_per_class >= 1");
    if (!(separation > 0.0)) throw InvalidParam("make_blobs: separation must be > 0");
    if (noise_sigma < 0.0) throw InvalidParam("make_blobs: noise_sigma must be >= 0");

    Rng rng(seed);
    const double min_angle = 2.0 * kPi / (3.0 * num_classes);
    auto dirs = sample_separated_directions(num_classes, input_dim, min_angle, rng);

    LabeledDataset out;
    out.num_classes = num_classes;
    out.name = "blobs";
    const size_t n = static_cast<size_t>(num_classes) * static_cast<size_t>(n_per_class);
    out.features = Mat(n, static_cast<size_t>(input_dim));
    out.labels.resize(n);

    size_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (int i = 0; i < n_per_class; ++i, ++row) {
            out.labels[row] = c;
            for (int k = 0; k < input_dim; ++k)
                out.features.at(row, static_cast<size_t>(k)) =
                    separation * dirs[static_cast<size_t>(c)][static_cast<size_t>(k)] +
                    noise_sigma * rng.normal();
        }
    }
    return out;
}

Mat class_feature_means(const LabeledDataset& id) {
    const size_t d = id.dim();
    Mat means(static_cast<size_t>(id.num_classes), d);
    std::vector<size_t> counts(static_cast<size_t>(id.num_classes), 0);
    for (size_t i = 0; i < id.size(); ++i) {
        const int y = id.labels[i];
        if (y < 0 || y >= id.num_classes)
            throw LabelOutOfRange("class_feature_means: label " + std::to_string(y));
        ++counts[static_cast<size_t>(y)];
        for (size_t k = 0; k < d; ++k) means.at(static_cast<size_t>(y), k) += id.features.at(i, k);
    }
    for (int c = 0; c < id.num_classes; ++c) {
        if (counts[static_cast<size_t>(c)] == 0)
            throw EmptyClass("class_feature_means: class " + std::to_string(c) + " is empty");
        const double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
        for (size_t k = 0; k < d; ++k) means.at(static_cast<size_t>(c), k) *= inv;
    }
    return means;
}

UnlabeledDataset make_ood(const LabeledDataset& id, OodMode mode, int m, double noise_sigma,
                          uint64_t seed) {
    if (m < 1) throw InvalidParam("make_ood: need m >= 1");
    if (noise_sigma < 0.0) throw InvalidParam("make_ood: noise_sigma must be >= 0");
    if (id.size() == 0) throw EmptyDataset("make_ood: empty ID dataset");

    const size_t d = id.dim();
    Rng rng(seed);
    Mat means = class_feature_means(id);
    const int C = id.num_classes;

    UnlabeledDataset out;
    out.name = ood_mode_name(mode);
    out.features = Mat(static_cast<size_t>(m), d);

    switch (mode) {
        case OodMode::Between: {
            if (C < 2) throw InvalidParam("make_ood: between mode needs >= 2 classes");
            for (int i = 0; i < m; ++i) {
                const auto a = rng.bounded(static_cast<uint64_t>(C));
                uint64_t b = rng.bounded(static_cast<uint64_t>(C - 1));
                if (b >= a) ++b;
                for (size_t k = 0; k < d; ++k)
                    out.features.at(static_cast<size_t>(i), k) =
                        0.5 * (means.at(a, k) + means.at(b, k)) + noise_sigma * rng.normal();
            }
            break;
        }
        case OodMode::Heldout: {
            double min_pair_angle = kPi;
            for (int a = 0; a < C; ++a)
                for (int b = a + 1; b < C; ++b)
                    min_pair_angle =
                        std::min(min_pair_angle, angle_between(means.row(static_cast<size_t>(a)),
                                                               means.row(static_cast<size_t>(b))));
            double mean_radius = 0.0;
            for (int c = 0; c < C; ++c) mean_radius += norm(means.row(static_cast<size_t>(c)));
            mean_radius /= C;

            Vec dir;
            int attempts = 0;
            for (;;) {
                if (++attempts > kMaxRejectionAttempts)
                    throw InvalidParam("make_ood: could not place a heldout mean away from all ID means");
                dir = rng.unit_vector(static_cast<int>(d));
                bool ok = true;
                for (int c = 0; c < C; ++c) {
                    if (angle_between(dir, means.row(static_cast<size_t>(c))) < min_pair_angle) {
                        ok = false;
                        break;
                    }
                }
                if (ok) break;
            }
            for (int i = 0; i < m; ++i)
                for (size_t k = 0; k < d; ++k)
                    out.features.at(static_cast<size_t>(i), k) =
                        mean_radius * dir[k] + noise_sigma * rng.normal();
            break;
        }
        case OodMode::Uniform: {
            Vec lo(d, std::numeric_limits<double>::infinity());
            Vec hi(d, -std::numeric_limits<double>::infinity());
            for (size_t i = 0; i < id.size(); ++i)
                for (size_t k = 0; k < d; ++k) {
                    lo[k] = std::min(lo[k], id.features.at(i, k));
                    hi[k] = std::max(hi[k], id.features.at(i, k));
                }
            for (int i = 0; i < m; ++i)
                for (size_t k = 0; k < d; ++k)
                    out.features.at(static_cast<size_t>(i), k) = rng.uniform(lo[k], hi[k]);
            break;
        }
    }
    return out;
}

std::pair<Vec, Vec> augment(std::span<const double> x, double noise_sigma, double scale_lo,
                            double scale_hi, Rng& rng) {
    if (!(scale_lo > 0.0) || scale_lo > scale_hi)
        throw InvalidParam("augment: need 0 < scale_lo <= scale_hi");
    if (noise_sigma < 0.0) throw InvalidParam("augment: noise_sigma must be >= 0");

    auto one_view = [&]() {
        const double s = rng.uniform(scale_lo, scale_hi);
        Vec v(x.size());
        for (size_t k = 0; k < x.size(); ++k) v[k] = s * x[k] + noise_sigma * rng.normal();
        return v;
    };
    Vec v1 = one_view();
    Vec v2 = one_view();
    return {std::move(v1), std::move(v2)};
}

std::string format_double17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace {

void write_csv(const std::string& path, const Mat& features, const std::vector<int>* labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (size_t k = 0; k < features.cols; ++k) {
        if (k) out << ',';
        out << "feature_" << k;
    }
    if (labels) out << ",label";
    out << '\n';
    for (size_t i = 0; i < features.rows; ++i) {
        for (size_t k = 0; k < features.cols; ++k) {
            if (k) out << ',';
            out << format_double17(features.at(i, k));
        }
        if (labels) out << ',' << (*labels)[i];
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double_field(const std::string& s, size_t line_no) {
    size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": not a number: '" + s + "'");
    }
    if (pos != s.size())
        throw ParseError("line " + std::to_string(line_no) + ": trailing junk in '" + s + "'");
    return v;
}

struct ParsedCsv {
    Mat features;
    std::vector<int> labels;
    bool has_label = false;
};

ParsedCsv parse_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty file: " + path);
    auto header = split_line(line);
    bool has_label = !header.empty() && header.back() == "label";
    const size_t dim = has_label ? header.size() - 1 : header.size();
    if (dim == 0) throw SchemaError("line 1: no feature columns in " + path);
    for (size_t k = 0; k < dim; ++k) {
        if (header[k] != "feature_" + std::to_string(k))
            throw SchemaError("line 1: expected header column 'feature_" + std::to_string(k) +
                              "', got '" + header[k] + "'");
    }

    std::vector<double> values;
    std::vector<int> labels;
    size_t rows = 0;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_line(line);
        if (fields.size() != header.size())
            throw SchemaError("line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " columns, got " +
                              std::to_string(fields.size()));
        for (size_t k = 0; k < dim; ++k) values.push_back(parse_double_field(fields[k], line_no));
        if (has_label) {
            const std::string& s = fields.back();
            size_t pos = 0;
            long lab;
            try {
                lab = std::stol(s, &pos);
            } catch (const std::exception&) {
                throw ParseError("line " + std::to_string(line_no) + ": bad label '" + s + "'");
            }
            if (pos != s.size() || lab < 0)
                throw ParseError("line " + std::to_string(line_no) + ": bad label '" + s + "'");
            labels.push_back(static_cast<int>(lab));
        }
        ++rows;
    }
    if (rows == 0) throw EmptyDataset("no data rows in " + path);

    ParsedCsv out;
    out.has_label = has_label;
    out.features.rows = rows;
    out.features.cols = dim;
    out.features.data = std::move(values);
    out.labels = std::move(labels);
    return out;
}

std::string stem_of(const std::string& path) {
    const size_t slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    const size_t dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
}

}  // namespace

void save_csv(const std::string& path, const LabeledDataset& dataset) {
    write_csv(path, dataset.features, &dataset.labels);
}

void save_csv(const std::string& path, const UnlabeledDataset& dataset) {
    write_csv(path, dataset.features, nullptr);
}

LabeledDataset load_labeled_csv(const std::string& path) {
    auto parsed = parse_csv(path);
    if (!parsed.has_label) throw SchemaError("expected a label column in " + path);
    LabeledDataset out;
    out.features = std::move(parsed.features);
    out.labels = std::move(parsed.labels);
    out.num_classes = 1 + *std::max_element(out.labels.begin(), out.labels.end());
    out.name = stem_of(path);
    return out;
}

UnlabeledDataset load_unlabeled_csv(const std::string& path) {
    auto parsed = parse_csv(path);
    if (parsed.has_label) throw SchemaError("unexpected label column in " + path);
    UnlabeledDataset out;
    out.features = std::move(parsed.features);
    out.name = stem_of(path);
    return out;
}

UnlabeledDataset subsample(const UnlabeledDataset& set, size_t max_size, uint64_t seed) {
    if (set.size() <= max_size) return set;
    std::vector<size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(max_size);
    std::sort(idx.begin(), idx.end());
    UnlabeledDataset out;
    out.name = set.name;
    out.features = Mat(max_size, set.dim());
    for (size_t i = 0; i < max_size; ++i) out.features.set_row(i, set.features.row(idx[i]));
    return out;
}

}  // namespace hypood
