#include "hypood/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hypood/datagen.hpp"
#include "hypood/errors.hpp"

#include "json.hpp"

namespace hypood {

const std::vector<double>& ScoreSet::ood(const std::string& name) const {
    for (const auto& [set_name, scores] : ood_scores)
        if (set_name == name) return scores;
    throw InvalidParam("ScoreSet: no OOD set named " + name);
}

MetricValue dispersion_metric(const PrototypeBank& bank) {
    const int C = bank.num_classes();
    if (C < 2) throw InvalidParam("dispersion_metric: need >= 2 prototypes");
    double sum = 0.0;
    for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j)
            if (j != i)
                sum += dot(bank.mu.row(static_cast<size_t>(i)),
                           bank.mu.row(static_cast<size_t>(j)));
    const double mean = sum / (static_cast<double>(C) * static_cast<double>(C - 1));
    return {mean, cosine_to_degrees(mean)};
}

MetricValue compactness_metric(const Mat& embeddings, const std::vector<int>& labels,
                               const PrototypeBank& bank, CompactnessForm form) {
    const size_t n = embeddings.rows;
    if (n == 0) throw EmptyDataset("compactness_metric: no samples");
    if (labels.size() != n) throw DimMismatch("compactness_metric: label count mismatch");
    const int C = bank.num_classes();

    std::vector<double> class_sum(static_cast<size_t>(C), 0.0);
    std::vector<size_t> class_count(static_cast<size_t>(C), 0);
    for (size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= C)
            throw LabelOutOfRange("compactness_metric: label " + std::to_string(y));
        class_sum[static_cast<size_t>(y)] +=
            dot(embeddings.row(i), bank.mu.row(static_cast<size_t>(y)));
        ++class_count[static_cast<size_t>(y)];
    }

    double mean = 0.0;
    if (form == CompactnessForm::Literal) {
        double total = 0.0;
        for (double s : class_sum) total += s;
        mean = total / static_cast<double>(n);
    } else {
        int populated = 0;
        for (int c = 0; c < C; ++c) {
            if (class_count[static_cast<size_t>(c)] == 0) continue;
            mean += class_sum[static_cast<size_t>(c)] /
                    static_cast<double>(class_count[static_cast<size_t>(c)]);
            ++populated;
        }
        if (populated == 0) throw EmptyDataset("compactness_metric: no populated classes");
        mean /= static_cast<double>(populated);
    }
    return {mean, cosine_to_degrees(mean)};
}

namespace {

double nearest_prototype_cosine(std::span<const double> z, const PrototypeBank& bank) {
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < bank.num_classes(); ++j)
        best = std::max(best, dot(z, bank.mu.row(static_cast<size_t>(j))));
    return best;
}

}  // namespace

double separability_metric(const Mat& id_embeddings, const Mat& ood_embeddings,
                           const PrototypeBank& bank, SeparabilityForm form) {
    if (id_embeddings.rows == 0 || ood_embeddings.rows == 0)
        throw EmptyDataset("separability_metric: empty input set");

    auto aggregate = [&](const Mat& set) {
        double sum = 0.0;
        for (size_t i = 0; i < set.rows; ++i) {
            const double c = nearest_prototype_cosine(set.row(i), bank);
            sum += form == SeparabilityForm::MeanAngles ? cosine_to_degrees(c) : c;
        }
        return sum / static_cast<double>(set.rows);
    };

    return aggregate(ood_embeddings) - aggregate(id_embeddings);
}

double mahalanobis_score(std::span<const double> z, const PrototypeBank& bank,
                         const CholeskyFactor& sigma_factor) {
    double best = std::numeric_limits<double>::infinity();
    Vec diff(z.size());
    for (int j = 0; j < bank.num_classes(); ++j) {
        auto mu = bank.mu.row(static_cast<size_t>(j));
        for (size_t k = 0; k < diff.size(); ++k) diff[k] = z[k] - mu[k];
        best = std::min(best, sigma_factor.quadform(diff));
    }
    return -best;
}

double max_cosine_score(std::span<const double> z, const PrototypeBank& bank) {
    return nearest_prototype_cosine(z, bank);
}

double msp_score(const LinearProbe& probe, std::span<const double> penultimate) {
    Vec logits = probe.classifier.logits(penultimate);
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - m);
    return 1.0 / s;  // exp(m - m) / sum = max softmax probability
}

double fpr95_threshold(const std::vector<double>& id_scores) {
    const size_t n = id_scores.size();
    if (n < 20) throw TooFewSamples("fpr_at_95tpr: need >= 20 ID scores, got " +
                                    std::to_string(n));
    // Keep the top ceil(0.95 n) scores on the ID side; the threshold is the
    // smallest of them. Integer arithmetic avoids 0.95*n roundoff.
    const size_t keep = (19 * n + 19) / 20;  // ceil(0.95 n)
    std::vector<double> sorted = id_scores;
    std::sort(sorted.begin(), sorted.end());
    return sorted[n - keep];
}

double fpr_at_95tpr(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
    if (ood_scores.empty()) throw EmptyDataset("fpr_at_95tpr: no OOD scores");
    const double lambda = fpr95_threshold(id_scores);
    size_t fp = 0;
    for (double s : ood_scores)
        if (s >= lambda) ++fp;
    return static_cast<double>(fp) / static_cast<double>(ood_scores.size());
}

double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
    if (id_scores.empty() || ood_scores.empty())
        throw EmptyDataset("auroc: both score sets must be non-empty");
    const size_t n_id = id_scores.size();
    const size_t n_ood = ood_scores.size();

    struct Entry {
        double score;
        bool is_id;
    };
    std::vector<Entry> all;
    all.reserve(n_id + n_ood);
    for (double s : id_scores) all.push_back({s, true});
    for (double s : ood_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
        return a.score < b.score;
    });

    // Midranks over tie groups; rank sums of halves are exact in doubles.
    double id_rank_sum = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (all[k].is_id) id_rank_sum += midrank;
        i = j;
    }
    const double n_id_d = static_cast<double>(n_id);
    const double wins = id_rank_sum - n_id_d * (n_id_d + 1.0) / 2.0;
    return wins / (n_id_d * static_cast<double>(n_ood));
}

Decision decide(double score, double lambda) {
    return score >= lambda ? Decision::Id : Decision::Ood;
}

// ---- report document -------------------------------------------------------

std::string report_to_json(const DetectionReport& report) {
    std::ostringstream out;
    out << "{\n  \"metadata\": {\"scorers\": [";
    for (size_t i = 0; i < report.scorer_names.size(); ++i) {
        if (i) out << ',';
        out << '"' << report.scorer_names[i] << '"';
    }
    out << "], \"checkpoint\": \"" << report.checkpoint_id << "\", \"train_seed\": "
        << report.train_seed << ", \"data_seed\": " << report.data_seed
        << ", \"subsample_seed\": " << report.subsample_seed << "},\n";
    out << "  \"id\": {\"dispersion_deg\": " << format_double17(report.dispersion_deg)
        << ", \"compactness_deg\": " << format_double17(report.compactness_deg)
        << ", \"probe_accuracy\": " << format_double17(report.probe_accuracy) << "},\n";
    out << "  \"ood_sets\": [\n";
    for (size_t i = 0; i < report.ood_sets.size(); ++i) {
        const auto& set = report.ood_sets[i];
        out << "    {\"name\": \"" << set.name << "\", \"separability_deg\": "
            << format_double17(set.separability_deg) << ", \"scorers\": {";
        for (size_t s = 0; s < set.scorers.size(); ++s) {
            if (s) out << ", ";
            out << '"' << set.scorers[s].first << "\": {\"fpr95\": "
                << format_double17(set.scorers[s].second.first) << ", \"auroc\": "
                << format_double17(set.scorers[s].second.second) << '}';
        }
        out << "}}" << (i + 1 < report.ood_sets.size() ? "," : "") << '\n';
    }
    out << "  ]\n}\n";
    return out.str();
}

void save_report(const std::string& path, const DetectionReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << report_to_json(report);
    if (!out) throw IoError("write failed: " + path);
}

DetectionReport load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("report " + path + ": " + e.what());
    }
    try {
        DetectionReport r;
        const auto& meta = j.at("metadata");
        r.scorer_names = meta.at("scorers").get<std::vector<std::string>>();
        r.checkpoint_id = meta.at("checkpoint").get<std::string>();
        r.train_seed = meta.at("train_seed").get<uint64_t>();
        r.data_seed = meta.at("data_seed").get<uint64_t>();
        r.subsample_seed = meta.at("subsample_seed").get<uint64_t>();
        const auto& id = j.at("id");
        r.dispersion_deg = id.at("dispersion_deg").get<double>();
        r.compactness_deg = id.at("compactness_deg").get<double>();
        r.probe_accuracy = id.at("probe_accuracy").get<double>();
        for (const auto& set : j.at("ood_sets")) {
            OodSetReport s;
            s.name = set.at("name").get<std::string>();
            s.separability_deg = set.at("separability_deg").get<double>();
            for (const std::string& scorer : r.scorer_names) {
                const auto& entry = set.at("scorers").at(scorer);
                s.scorers.push_back({scorer,
                                     {entry.at("fpr95").get<double>(),
                                      entry.at("auroc").get<double>()}});
            }
            r.ood_sets.push_back(std::move(s));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("report " + path + ": " + e.what());
    }
}

std::string format_report_table(const DetectionReport& report) {
    std::ostringstream out;
    auto fixed2 = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };

    out << "ID metrics: dispersion " << fixed2(report.dispersion_deg) << " deg | compactness "
        << fixed2(report.compactness_deg) << " deg | probe accuracy "
        << fixed2(100.0 * report.probe_accuracy) << "%\n\n";

    const std::string head = "scorer";
    size_t scorer_width = head.size();
    for (const auto& s : report.scorer_names) scorer_width = std::max(scorer_width, s.size());

    out << std::string(scorer_width, ' ');
    for (const auto& set : report.ood_sets) {
        std::string label = set.name + " (sep " + fixed2(set.separability_deg) + ")";
        out << "  " << label;
    }
    out << '\n';
    out << std::string(scorer_width, ' ');
    for (const auto& set : report.ood_sets) {
        std::string label = set.name + " (sep " + fixed2(set.separability_deg) + ")";
        std::string cols = "FPR95 AUROC";
        if (label.size() > cols.size()) cols += std::string(label.size() - cols.size(), ' ');
        out << "  " << cols;
    }
    out << '\n';

    for (const auto& scorer : report.scorer_names) {
        out << scorer << std::string(scorer_width - scorer.size(), ' ');
        for (const auto& set : report.ood_sets) {
            std::string label = set.name + " (sep " + fixed2(set.separability_deg) + ")";
            double fpr = 0.0, auc = 0.0;
            for (const auto& [name, vals] : set.scorers)
                if (name == scorer) {
                    fpr = vals.first;
                    auc = vals.second;
                }
            std::string cell = fixed2(100.0 * fpr) + "  " + fixed2(100.0 * auc);
            if (label.size() > cell.size()) cell += std::string(label.size() - cell.size(), ' ');
            out << "  " << cell;
        }
        out << '\n';
    }
    return out.str();
}

void save_scores_csv(const std::string& path, const ScoreSet& scores,
                     const std::string& id_set_name) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "sample_index,set_name,score\n";
    for (size_t i = 0; i < scores.id_scores.size(); ++i)
        out << i << ',' << id_set_name << ',' << format_double17(scores.id_scores[i]) << '\n';
    for (const auto& [name, values] : scores.ood_scores)
        for (size_t i = 0; i < values.size(); ++i)
            out << i << ',' << name << ',' << format_double17(values[i]) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

ScoreSet load_scores_csv(const std::string& path, const std::string& id_set_name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty scores file " + path);

    ScoreSet out;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::istringstream ss(line);
        std::string idx_s, name, score_s;
        if (!std::getline(ss, idx_s, ',') || !std::getline(ss, name, ',') ||
            !std::getline(ss, score_s))
            throw ParseError("line " + std::to_string(line_no) + ": malformed scores row");
        if (!score_s.empty() && score_s.back() == '\r') score_s.pop_back();
        double v;
        try {
            v = std::stod(score_s);
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(line_no) + ": bad score '" + score_s + "'");
        }
        if (name == id_set_name) {
            out.id_scores.push_back(v);
        } else {
            auto it = std::find_if(out.ood_scores.begin(), out.ood_scores.end(),
                                   [&](const auto& p) { return p.first == name; });
            if (it == out.ood_scores.end()) {
                out.ood_scores.push_back({name, {v}});
            } else {
                it->second.push_back(v);
            }
        }
    }
    return out;
}

}  // namespace hypood
