#include "hypood/runner.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "hypood/errors.hpp"
#include "hypood/objectives.hpp"

namespace hypood {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kStreamOodGen = 11;
constexpr uint64_t kStreamProbe = 12;

uint64_t derive_seed(uint64_t base, uint64_t label, uint64_t index = 0) {
    return Rng(base).derive(label, index).next_u64();
}

}  // namespace

ResolvedData resolve_data(const ExperimentConfig& cfg) {
    ResolvedData data;
    if (cfg.data.source == "synthetic") {
        const auto& d = cfg.data;
        // One blob set per class covering train+test so both splits share
        // the same class means.
        LabeledDataset all = make_blobs(d.classes, d.train_per_class + d.test_per_class,
                                        d.input_dim, d.separation, d.noise_sigma, d.seed);
        const size_t per_class = static_cast<size_t>(d.train_per_class + d.test_per_class);
        data.id_train.num_classes = d.classes;
        data.id_train.name = "id_train";
        data.id_train.features =
            Mat(static_cast<size_t>(d.classes) * static_cast<size_t>(d.train_per_class),
                all.dim());
        data.id_test.num_classes = d.classes;
        data.id_test.name = "id_test";
        data.id_test.features =
            Mat(static_cast<size_t>(d.classes) * static_cast<size_t>(d.test_per_class), all.dim());
        size_t train_row = 0, test_row = 0;
        for (int c = 0; c < d.classes; ++c) {
            const size_t base = static_cast<size_t>(c) * per_class;
            for (int i = 0; i < d.train_per_class; ++i, ++train_row) {
                data.id_train.features.set_row(train_row, all.features.row(base + i));
                data.id_train.labels.push_back(c);
            }
            for (int i = 0; i < d.test_per_class; ++i, ++test_row) {
                data.id_test.features.set_row(
                    test_row, all.features.row(base + static_cast<size_t>(d.train_per_class) + i));
                data.id_test.labels.push_back(c);
            }
        }
        for (size_t m = 0; m < d.ood_modes.size(); ++m) {
            auto set = make_ood(data.id_train, parse_ood_mode(d.ood_modes[m]), d.ood_samples,
                                d.ood_noise_sigma, derive_seed(d.seed, kStreamOodGen, m));
            data.ood_sets.push_back(std::move(set));
        }
    } else {
        data.id_train = load_labeled_csv(cfg.data.train_csv);
        data.id_test = load_labeled_csv(cfg.data.test_csv);
        if (data.id_test.num_classes > data.id_train.num_classes)
            throw SchemaError("id test set has labels outside the training label range");
        data.id_test.num_classes = data.id_train.num_classes;
        if (data.id_train.dim() != data.id_test.dim())
            throw SchemaError("ID train/test feature dimensions differ");
        for (const auto& [name, path] : cfg.data.ood_csv) {
            auto set = load_unlabeled_csv(path);
            if (set.dim() != data.id_train.dim())
                throw SchemaError("OOD set " + name + " feature dimension differs from ID");
            set.name = name;
            data.ood_sets.push_back(std::move(set));
        }
    }

    // OOD test sets larger than the ID test set are subsampled, seeded.
    for (size_t i = 0; i < data.ood_sets.size(); ++i)
        data.ood_sets[i] = subsample(data.ood_sets[i], data.id_test.size(),
                                     derive_seed(cfg.eval.subsample_seed, i));
    return data;
}

Mat eval_embeddings(const EvalConfig& eval, const Weights& weights, const MlpSpec& spec,
                    const Mat& features) {
    if (eval.feature_space == "projection") return embed_all(weights, spec, features);
    Mat penult = penultimate_all(weights, spec, features);
    Mat z(penult.rows, penult.cols);
    for (size_t i = 0; i < penult.rows; ++i) z.set_row(i, l2_normalize(penult.row(i)));
    return z;
}

namespace {

PrototypeBank empirical_bank(const Mat& embeddings, const std::vector<int>& labels,
                             int num_classes, double alpha) {
    const size_t d = embeddings.cols;
    Mat sums(static_cast<size_t>(num_classes), d);
    std::vector<size_t> counts(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < embeddings.rows; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= num_classes)
            throw LabelOutOfRange("empirical_bank: label " + std::to_string(y));
        ++counts[static_cast<size_t>(y)];
        for (size_t k = 0; k < d; ++k) sums.at(static_cast<size_t>(y), k) += embeddings.at(i, k);
    }
    PrototypeBank bank;
    bank.alpha = alpha;
    bank.mu = Mat(static_cast<size_t>(num_classes), d);
    bank.update_count.assign(static_cast<size_t>(num_classes), 0);
    for (int c = 0; c < num_classes; ++c) {
        if (counts[static_cast<size_t>(c)] == 0)
            throw EmptyClass("empirical_bank: class " + std::to_string(c) + " is empty");
        Vec mean(d);
        for (size_t k = 0; k < d; ++k)
            mean[k] = sums.at(static_cast<size_t>(c), k) /
                      static_cast<double>(counts[static_cast<size_t>(c)]);
        bank.mu.set_row(static_cast<size_t>(c), l2_normalize(mean));
    }
    return bank;
}

}  // namespace

EvalOutputs evaluate_experiment(const ExperimentConfig& cfg, const ResolvedData& data,
                                const Weights& weights, const MlpSpec& spec,
                                const PrototypeBank* ema_bank) {
    EvalOutputs out;

    out.id_train_z = eval_embeddings(cfg.eval, weights, spec, data.id_train.features);
    out.id_test_z = eval_embeddings(cfg.eval, weights, spec, data.id_test.features);
    for (const auto& set : data.ood_sets)
        out.ood_z.push_back(eval_embeddings(cfg.eval, weights, spec, set.features));

    if (cfg.eval.prototype_source == "ema") {
        if (!ema_bank) throw InvalidParam("evaluate_experiment: no EMA bank available");
        out.eval_bank = *ema_bank;
    } else {
        out.eval_bank = empirical_bank(out.id_train_z, data.id_train.labels,
                                       data.id_train.num_classes, cfg.train.prototype_alpha);
    }

    // Probe on raw penultimate features of the frozen encoder.
    Mat train_penult = penultimate_all(weights, spec, data.id_train.features);
    out.probe = train_linear_probe(train_penult, data.id_train.labels, data.id_train.num_classes,
                                   cfg.train.probe_l2, cfg.train.probe_iters,
                                   derive_seed(cfg.train.seed, kStreamProbe));

    const bool need_mahalanobis =
        std::find(cfg.eval.scorers.begin(), cfg.eval.scorers.end(), "mahalanobis") !=
        cfg.eval.scorers.end();
    CholeskyFactor sigma_factor;
    if (need_mahalanobis) {
        Mat sigma = shared_covariance(out.id_train_z, data.id_train.labels, out.eval_bank);
        sigma_factor = cholesky(sigma);
    }

    Mat test_penult;
    std::vector<Mat> ood_penult;
    const bool need_msp = std::find(cfg.eval.scorers.begin(), cfg.eval.scorers.end(), "msp") !=
                          cfg.eval.scorers.end();
    if (need_msp) {
        test_penult = penultimate_all(weights, spec, data.id_test.features);
        for (const auto& set : data.ood_sets)
            ood_penult.push_back(penultimate_all(weights, spec, set.features));
    }

    auto score_rows = [&](const std::string& scorer, const Mat& z, const Mat& penult) {
        std::vector<double> scores(z.rows);
        for (size_t i = 0; i < z.rows; ++i) {
            if (scorer == "mahalanobis")
                scores[i] = mahalanobis_score(z.row(i), out.eval_bank, sigma_factor);
            else if (scorer == "max_cosine")
                scores[i] = max_cosine_score(z.row(i), out.eval_bank);
            else
                scores[i] = msp_score(out.probe.probe, penult.row(i));
        }
        return scores;
    };

    for (const auto& scorer : cfg.eval.scorers) {
        ScoreSet set;
        set.id_scores = score_rows(scorer, out.id_test_z, test_penult);
        for (size_t s = 0; s < data.ood_sets.size(); ++s)
            set.ood_scores.push_back(
                {data.ood_sets[s].name,
                 score_rows(scorer, out.ood_z[s], need_msp ? ood_penult[s] : Mat{})});
        out.scores.push_back({scorer, std::move(set)});
    }

    // Report.
    DetectionReport& report = out.report;
    report.scorer_names = cfg.eval.scorers;
    report.checkpoint_id = "checkpoint.json";
    report.train_seed = cfg.train.seed;
    report.data_seed = cfg.data.seed;
    report.subsample_seed = cfg.eval.subsample_seed;
    report.dispersion_deg = dispersion_metric(out.eval_bank).degrees;
    report.compactness_deg =
        compactness_metric(out.id_test_z, data.id_test.labels, out.eval_bank,
                           cfg.eval.compactness == "literal" ? CompactnessForm::Literal
                                                             : CompactnessForm::PerClassMean)
            .degrees;
    report.probe_accuracy = out.probe.heldout_accuracy;

    const auto sep_form = cfg.eval.separability == "angles" ? SeparabilityForm::MeanAngles
                                                            : SeparabilityForm::RawCosine;
    for (size_t s = 0; s < data.ood_sets.size(); ++s) {
        OodSetReport set_report;
        set_report.name = data.ood_sets[s].name;
        set_report.separability_deg =
            separability_metric(out.id_test_z, out.ood_z[s], out.eval_bank, sep_form);
        for (const auto& [scorer, scores] : out.scores) {
            const auto& ood = scores.ood(data.ood_sets[s].name);
            set_report.scorers.push_back(
                {scorer, {fpr_at_95tpr(scores.id_scores, ood), auroc(scores.id_scores, ood)}});
        }
        report.ood_sets.push_back(std::move(set_report));
    }
    return out;
}

void save_embeddings_csv(const std::string& path, const ResolvedData& data,
                         const EvalOutputs& outputs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const size_t d = outputs.id_train_z.cols;
    out << "sample_index,set_name,label";
    for (size_t k = 0; k < d; ++k) out << ",z_" << k;
    out << '\n';
    auto dump = [&](const Mat& z, const std::string& set_name, const std::vector<int>* labels) {
        for (size_t i = 0; i < z.rows; ++i) {
            out << i << ',' << set_name << ',' << (labels ? (*labels)[i] : -1);
            for (size_t k = 0; k < d; ++k) out << ',' << format_double17(z.at(i, k));
            out << '\n';
        }
    };
    dump(outputs.id_train_z, "id_train", &data.id_train.labels);
    dump(outputs.id_test_z, "id_test", &data.id_test.labels);
    for (size_t s = 0; s < data.ood_sets.size(); ++s)
        dump(outputs.ood_z[s], data.ood_sets[s].name, nullptr);
    if (!out) throw IoError("write failed: " + path);
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const fs::path target(out_dir);
    if (fs::exists(target))
        throw ConfigError("output directory already exists: " + out_dir);

    ResolvedData data = resolve_data(cfg);

    MlpSpec spec = cfg.model;
    if (cfg.model_input_dim_auto) spec.input_dim = static_cast<int>(data.id_train.dim());
    spec.validate();
    if (spec.input_dim != static_cast<int>(data.id_train.dim()))
        throw ConfigError("model.input_dim does not match the data dimension " +
                          std::to_string(data.id_train.dim()));

    Weights weights = init_weights(spec, cfg.train.seed);
    TrainResult trained = train(std::move(weights), spec, data.id_train, cfg.train);

    EvalOutputs outputs =
        evaluate_experiment(cfg, data, trained.weights, spec, &trained.bank);

    // Stage everything in a temp dir, then rename into place.
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(static_cast<unsigned long>(::getpid()));
    std::error_code ec;
    fs::remove_all(tmp, ec);
    if (!fs::create_directories(tmp))
        throw IoError("cannot create staging directory: " + tmp.string());

    RunArtifacts artifacts;
    try {
        Checkpoint ckpt;
        ckpt.spec = spec;
        ckpt.weights = trained.weights;
        ckpt.prototypes = trained.bank;
        save_checkpoint((tmp / "checkpoint.json").string(), ckpt);
        save_history_csv((tmp / "history.csv").string(), trained.history);
        for (const auto& [scorer, scores] : outputs.scores)
            save_scores_csv((tmp / ("scores_" + scorer + ".csv")).string(), scores);
        save_embeddings_csv((tmp / "embeddings.csv").string(), data, outputs);
        save_report((tmp / "report.json").string(), outputs.report);
        {
            ExperimentConfig snapshot = cfg;
            snapshot.output_dir = out_dir;
            std::ofstream ini(tmp / "config_resolved.ini", std::ios::binary);
            if (!ini) throw IoError("cannot write resolved config");
            ini << resolved_config_ini(snapshot);
        }
        const fs::path parent = target.parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        fs::rename(tmp, target);
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }

    artifacts.out_dir = target.string();
    artifacts.checkpoint_path = (target / "checkpoint.json").string();
    artifacts.history_path = (target / "history.csv").string();
    for (const auto& [scorer, scores] : outputs.scores)
        artifacts.scores_paths.push_back(
            {scorer, (target / ("scores_" + scorer + ".csv")).string()});
    artifacts.embeddings_path = (target / "embeddings.csv").string();
    artifacts.report_path = (target / "report.json").string();
    artifacts.resolved_config_path = (target / "config_resolved.ini").string();
    artifacts.report = outputs.report;
    return artifacts;
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, const std::string& axis,
                                   double value) {
    ExperimentConfig cfg = base;
    if (axis == "lambda_c") {
        cfg.train.loss.lambda_c = value;
    } else if (axis == "lr0") {
        cfg.train.lr0 = value;
    } else if (axis == "alpha") {
        cfg.train.prototype_alpha = value;
    } else if (axis == "tau") {
        cfg.train.loss.tau = value;
    } else if (axis == "batch_size") {
        const double rounded = std::round(value);
        if (rounded != value || rounded < 1.0)
            throw ConfigError("sweep: batch_size values must be positive integers");
        cfg.train.batch_size = static_cast<int>(rounded);
    } else {
        throw ConfigError("sweep: unknown axis '" + axis +
                          "' (expected lambda_c, lr0, alpha, tau or batch_size)");
    }
    return cfg;
}

namespace {

size_t sweep_thread_cap() {
    if (const char* env = std::getenv("HYPOOD_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end && *end == '\0' && v >= 1) return static_cast<size_t>(v);
    }
    return 1;
}

}  // namespace

SweepResult sweep(const ExperimentConfig& base, const std::string& axis,
                  const std::vector<double>& values, const std::string& out_dir) {
    if (values.empty()) throw ConfigError("sweep: values list must not be empty");
    for (double v : values) apply_sweep_value(base, axis, v);  // validate axis early

    const fs::path root(out_dir);
    fs::create_directories(root);

    SweepResult result;
    result.points.resize(values.size());

    std::atomic<size_t> next{0};
    const size_t workers = std::min(sweep_thread_cap(), values.size());
    auto work = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= values.size()) return;
            SweepPoint& point = result.points[i];
            point.value = values[i];
            const fs::path point_dir = root / (axis + "_" + std::to_string(i));
            try {
                ExperimentConfig cfg = apply_sweep_value(base, axis, values[i]);
                std::error_code ec;
                fs::remove_all(point_dir, ec);
                auto artifacts = run_experiment(cfg, point_dir.string());
                point.report = artifacts.report;
            } catch (const std::exception& e) {
                point.failed = true;
                point.error = e.what();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    const fs::path summary = root / "summary.csv";
    std::ofstream out(summary, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + summary.string());
    out << "value,ood_set,scorer,fpr95,auroc,id_acc\n";
    for (const auto& point : result.points) {
        if (point.failed) {
            out << format_double17(point.value) << ",-,-,error,error,error\n";
            continue;
        }
        for (const auto& set : point.report.ood_sets)
            for (const auto& [scorer, vals] : set.scorers)
                out << format_double17(point.value) << ',' << set.name << ',' << scorer << ','
                    << format_double17(vals.first) << ',' << format_double17(vals.second) << ','
                    << format_double17(point.report.probe_accuracy) << '\n';
    }
    if (!out) throw IoError("write failed: " + summary.string());
    result.summary_path = summary.string();
    return result;
}

}  // namespace hypood
