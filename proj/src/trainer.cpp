#include "hypood/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hypood/errors.hpp"
#include "hypood/evaluation.hpp"

namespace hypood {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;

// Substream labels for Rng::derive.
constexpr uint64_t kStreamShuffle = 1;
constexpr uint64_t kStreamAugment = 2;
constexpr uint64_t kStreamProtoInit = 3;
constexpr uint64_t kStreamClassifier = 4;
}  // namespace

LrSchedule parse_schedule(const std::string& name) {
    if (name == "cosine") return LrSchedule::Cosine;
    if (name == "constant") return LrSchedule::Constant;
    throw ConfigError("unknown schedule: " + name);
}

PrototypeUpdateMode parse_prototype_update(const std::string& name) {
    if (name == "per_sample") return PrototypeUpdateMode::PerSample;
    if (name == "per_batch") return PrototypeUpdateMode::PerBatch;
    throw ConfigError("unknown prototype_update: " + name);
}

PrototypeInit parse_prototype_init(const std::string& name) {
    if (name == "data") return PrototypeInit::FromData;
    if (name == "random") return PrototypeInit::Random;
    throw ConfigError("unknown prototype_init: " + name);
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("TrainConfig: lr0 must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("TrainConfig: momentum in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
    if (prototype_alpha < 0.0 || prototype_alpha > 1.0)
        throw ConfigError("TrainConfig: prototype_alpha in [0,1]");
    if (prototype_update == PrototypeUpdateMode::Frozen)
        throw ConfigError("TrainConfig: frozen prototype mode is not a training mode");
    if (!(augment_scale_lo > 0.0) || augment_scale_lo > augment_scale_hi)
        throw ConfigError("TrainConfig: need 0 < augment_scale_lo <= augment_scale_hi");
    if (augment_noise_sigma < 0.0) throw ConfigError("TrainConfig: augment_noise_sigma >= 0");
    if (probe_l2 < 0.0) throw ConfigError("TrainConfig: probe_l2 must be >= 0");
    if (probe_iters < 1) throw ConfigError("TrainConfig: probe_iters must be >= 1");
    loss.validate();
}

void save_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "epoch,loss,lr,dispersion_deg,compactness_deg,seconds\n";
    for (const auto& row : history)
        out << row.epoch << ',' << format_double17(row.loss) << ',' << format_double17(row.lr)
            << ',' << format_double17(row.dispersion_deg) << ','
            << format_double17(row.compactness_deg) << ',' << format_double17(row.seconds)
            << '\n';
    if (!out) throw IoError("write failed: " + path);
}

Vec LinearClassifier::logits(std::span<const double> features) const {
    if (features.size() != w.cols) throw DimMismatch("LinearClassifier: feature dim mismatch");
    Vec out(w.rows);
    for (size_t r = 0; r < w.rows; ++r) {
        double s = b[r];
        const double* row = w.data.data() + r * w.cols;
        for (size_t c = 0; c < w.cols; ++c) s += row[c] * features[c];
        out[r] = s;
    }
    return out;
}

double cosine_lr(long step, long total_steps, double lr0) {
    if (total_steps < 1) throw InvalidParam("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps) throw InvalidParam("cosine_lr: step out of range");
    if (!(lr0 > 0.0)) throw InvalidParam("cosine_lr: lr0 must be > 0");
    return lr0 * 0.5 *
           (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

namespace {

void sgd_apply(std::span<double> w, std::span<const double> g, std::span<double> v, double lr,
               double momentum, double weight_decay) {
    for (size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + weight_decay * w[i];
        v[i] = momentum * v[i] + gi;
        w[i] -= lr * v[i];
    }
}

}  // namespace

void sgd_step(Weights& weights, const WeightGrads& grads, WeightGrads& momentum_state, double lr,
              double momentum, double weight_decay) {
    if (weights.layers.size() != grads.layers.size() ||
        weights.layers.size() != momentum_state.layers.size())
        throw DimMismatch("sgd_step: layer count mismatch");
    for (size_t l = 0; l < weights.layers.size(); ++l) {
        auto& wl = weights.layers[l];
        const auto& gl = grads.layers[l];
        auto& vl = momentum_state.layers[l];
        if (wl.w.data.size() != gl.w.data.size() || wl.b.size() != gl.b.size())
            throw DimMismatch("sgd_step: shape mismatch at layer " + std::to_string(l));
        sgd_apply(wl.w.data, gl.w.data, vl.w.data, lr, momentum, weight_decay);
        sgd_apply(wl.b, gl.b, vl.b, lr, momentum, weight_decay);
    }
    ++weights.version;
}

void sgd_step(LinearClassifier& cls, const Mat& w_grad, const Vec& b_grad,
              LinearClassifier& momentum_state, double lr, double momentum, double weight_decay) {
    if (cls.w.data.size() != w_grad.data.size() || cls.b.size() != b_grad.size())
        throw DimMismatch("sgd_step: classifier shape mismatch");
    sgd_apply(cls.w.data, w_grad.data, momentum_state.w.data, lr, momentum, weight_decay);
    sgd_apply(cls.b, b_grad, momentum_state.b, lr, momentum, weight_decay);
}

BatchGradients process_batch(const Weights& weights, const MlpSpec& spec,
                             const LinearClassifier* classifier, const Mat& views,
                             const std::vector<int>& view_labels, PrototypeBank& bank,
                             const LossConfig& loss_cfg, PrototypeUpdateMode update_mode,
                             bool want_grads) {
    const size_t n = views.rows;
    if (view_labels.size() != n) throw DimMismatch("process_batch: label count mismatch");
    if (loss_uses_classifier(loss_cfg.kind) && classifier == nullptr)
        throw InvalidParam("process_batch: loss kind needs a classifier head");

    // Forward every view.
    std::vector<ForwardCache> caches(n);
    std::vector<Vec> penult(n);
    Mat z(n, static_cast<size_t>(spec.proj_dim));
    for (size_t i = 0; i < n; ++i) {
        auto res = forward(weights, spec, views.row(i));
        z.set_row(i, res.z);
        penult[i] = std::move(res.penultimate);
        caches[i] = std::move(res.cache);
    }

    // EMA prototype updates; Jacobians are recorded only when the gradient
    // will be routed through them.
    const bool route_through_ema = want_grads && loss_uses_prototypes(loss_cfg.kind) &&
                                   !loss_cfg.detach_prototypes &&
                                   update_mode != PrototypeUpdateMode::Frozen;
    struct TapeEntry {
        int class_id;
        std::vector<size_t> view_indices;  // one entry in per-sample mode
        EmaJacobian jac;
    };
    std::vector<TapeEntry> tape;

    if (update_mode == PrototypeUpdateMode::PerSample) {
        for (size_t i = 0; i < n; ++i) {
            auto jac = ema_update(bank, z.row(i), view_labels[i], route_through_ema);
            if (jac) tape.push_back({view_labels[i], {i}, std::move(*jac)});
        }
    } else if (update_mode == PrototypeUpdateMode::PerBatch) {
        for (int c = 0; c < bank.num_classes(); ++c) {
            std::vector<size_t> members;
            for (size_t i = 0; i < n; ++i)
                if (view_labels[i] == c) members.push_back(i);
            if (members.empty()) continue;
            Vec mean(z.cols, 0.0);
            for (size_t i : members)
                for (size_t k = 0; k < z.cols; ++k) mean[k] += z.at(i, k);
            for (auto& x : mean) x /= static_cast<double>(members.size());
            auto jac = ema_update(bank, mean, c, route_through_ema);
            if (jac) tape.push_back({c, std::move(members), std::move(*jac)});
        }
    }

    // Classifier logits on penultimate features.
    Mat logits;
    if (classifier) {
        logits = Mat(n, classifier->w.rows);
        for (size_t i = 0; i < n; ++i) logits.set_row(i, classifier->logits(penult[i]));
    }

    auto loss = combined_loss(z, view_labels, bank, classifier ? &logits : nullptr, loss_cfg);

    BatchGradients out;
    out.loss = loss.value;
    if (!want_grads) return out;

    // Route prototype gradients back into the view embeddings through the
    // recorded EMA chain, newest update first. The prototype state entering
    // the batch is a constant.
    Mat grad_z = loss.grad_z;
    if (route_through_ema && loss.grad_proto.rows > 0) {
        for (int c = 0; c < bank.num_classes(); ++c) {
            Vec g = loss.grad_proto.row_vec(static_cast<size_t>(c));
            for (size_t t = tape.size(); t-- > 0;) {
                if (tape[t].class_id != c) continue;
                const auto& entry = tape[t];
                Vec gz = entry.jac.apply_wrt_z(g);
                const double share = 1.0 / static_cast<double>(entry.view_indices.size());
                for (size_t i : entry.view_indices) {
                    auto row = grad_z.row(i);
                    for (size_t k = 0; k < row.size(); ++k) row[k] += share * gz[k];
                }
                g = entry.jac.apply_wrt_mu(g);
            }
        }
    }

    // Classifier gradients and the penultimate-feature path.
    std::vector<Vec> dpen(n);
    if (classifier && loss.grad_logits) {
        out.classifier_w_grad = Mat(classifier->w.rows, classifier->w.cols);
        out.classifier_b_grad = Vec(classifier->b.size(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            auto gl = loss.grad_logits->row(i);
            for (size_t r = 0; r < classifier->w.rows; ++r) {
                out.classifier_b_grad[r] += gl[r];
                double* wrow = out.classifier_w_grad.data.data() + r * classifier->w.cols;
                for (size_t c = 0; c < classifier->w.cols; ++c) wrow[c] += gl[r] * penult[i][c];
            }
            dpen[i].assign(classifier->w.cols, 0.0);
            for (size_t r = 0; r < classifier->w.rows; ++r) {
                const double g = gl[r];
                if (g == 0.0) continue;
                const double* wrow = classifier->w.data.data() + r * classifier->w.cols;
                for (size_t c = 0; c < classifier->w.cols; ++c) dpen[i][c] += g * wrow[c];
            }
        }
    }

    out.weight_grads = zero_grads(spec);
    for (size_t i = 0; i < n; ++i) {
        auto back = backward(weights, spec, caches[i], grad_z.row(i), dpen[i]);
        accumulate(out.weight_grads, back.grads);
    }
    return out;
}

namespace {

LinearClassifier init_classifier(int num_classes, int feature_dim, Rng& rng) {
    LinearClassifier cls;
    cls.w = Mat(static_cast<size_t>(num_classes), static_cast<size_t>(feature_dim));
    cls.b = Vec(static_cast<size_t>(num_classes), 0.0);
    const double std = std::sqrt(2.0 / static_cast<double>(feature_dim));
    for (auto& x : cls.w.data) x = rng.normal(0.0, std);
    return cls;
}

void check_bank_norms(const PrototypeBank& bank) {
    for (int c = 0; c < bank.num_classes(); ++c) {
        const double dev = std::abs(norm(bank.mu.row(static_cast<size_t>(c))) - 1.0);
        if (dev > 1e-8)
            throw NonFinite("prototype " + std::to_string(c) + " drifted off the unit sphere");
    }
}

}  // namespace

TrainResult train(Weights weights, const MlpSpec& spec, const LabeledDataset& dataset,
                  const TrainConfig& config, const StepObserver& observer) {
    config.validate();
    spec.validate();
    if (dataset.size() == 0) throw EmptyDataset("train: empty dataset");
    if (dataset.dim() != static_cast<size_t>(spec.input_dim))
        throw DimMismatch("train: dataset dim != spec input_dim");

    Rng rng(config.seed);

    TrainResult result;
    if (config.prototype_init == PrototypeInit::FromData) {
        result.bank = init_from_data(weights, spec, dataset, config.prototype_alpha);
    } else {
        Rng proto_rng = rng.derive(kStreamProtoInit);
        result.bank =
            init_random(dataset.num_classes, spec.proj_dim, config.prototype_alpha, proto_rng);
    }

    result.has_classifier = loss_uses_classifier(config.loss.kind);
    if (result.has_classifier) {
        Rng cls_rng = rng.derive(kStreamClassifier);
        result.classifier = init_classifier(dataset.num_classes, spec.penultimate_dim, cls_rng);
    }

    if (config.epochs == 0) {
        result.weights = std::move(weights);
        return result;
    }

    const size_t n = dataset.size();
    const long batches_per_epoch =
        static_cast<long>((n + static_cast<size_t>(config.batch_size) - 1) /
                          static_cast<size_t>(config.batch_size));
    const long total_steps = static_cast<long>(config.epochs) * batches_per_epoch;

    WeightGrads momentum_state = zero_grads(spec);
    LinearClassifier cls_momentum;
    if (result.has_classifier) {
        cls_momentum.w = Mat(result.classifier.w.rows, result.classifier.w.cols);
        cls_momentum.b = Vec(result.classifier.b.size(), 0.0);
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        Rng shuffle_rng = rng.derive(kStreamShuffle, static_cast<uint64_t>(epoch));
        std::iota(order.begin(), order.end(), size_t{0});
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        const double epoch_lr = config.schedule == LrSchedule::Cosine
                                    ? cosine_lr(step, total_steps, config.lr0)
                                    : config.lr0;

        for (size_t start = 0; start < n; start += static_cast<size_t>(config.batch_size)) {
            const size_t stop = std::min(n, start + static_cast<size_t>(config.batch_size));
            const size_t b = stop - start;

            Mat views(2 * b, dataset.dim());
            std::vector<int> view_labels(2 * b);
            for (size_t k = 0; k < b; ++k) {
                const size_t idx = order[start + k];
                Rng aug_rng =
                    rng.derive(kStreamAugment, static_cast<uint64_t>(epoch), idx);
                auto [v1, v2] = augment(dataset.features.row(idx), config.augment_noise_sigma,
                                        config.augment_scale_lo, config.augment_scale_hi, aug_rng);
                views.set_row(2 * k, v1);
                views.set_row(2 * k + 1, v2);
                view_labels[2 * k] = dataset.labels[idx];
                view_labels[2 * k + 1] = dataset.labels[idx];
            }

            const double lr = config.schedule == LrSchedule::Cosine
                                  ? cosine_lr(step, total_steps, config.lr0)
                                  : config.lr0;
            auto grads = process_batch(weights, spec,
                                       result.has_classifier ? &result.classifier : nullptr, views,
                                       view_labels, result.bank, config.loss,
                                       config.prototype_update, /*want_grads=*/true);
            if (!std::isfinite(grads.loss))
                throw NonFinite("train: loss became non-finite at step " + std::to_string(step));
            loss_sum += grads.loss;

            sgd_step(weights, grads.weight_grads, momentum_state, lr, config.momentum,
                     config.weight_decay);
            if (result.has_classifier)
                sgd_step(result.classifier, grads.classifier_w_grad, grads.classifier_b_grad,
                         cls_momentum, lr, config.momentum, config.weight_decay);

            if (observer) {
                Mat z(views.rows, static_cast<size_t>(spec.proj_dim));
                for (size_t i = 0; i < views.rows; ++i) {
                    auto res = forward(weights, spec, views.row(i));
                    z.set_row(i, res.z);
                }
                observer(StepInfo{epoch, step, grads.loss, lr, result.bank, z});
            }
            ++step;
        }

        check_bank_norms(result.bank);

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = loss_sum / static_cast<double>(batches_per_epoch);
        stats.lr = epoch_lr;
        stats.dispersion_deg = dispersion_metric(result.bank).degrees;
        Mat train_z = embed_all(weights, spec, dataset.features);
        stats.compactness_deg =
            compactness_metric(train_z, dataset.labels, result.bank, CompactnessForm::Literal)
                .degrees;
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                      epoch_start)
                            .count();
        result.history.push_back(stats);
    }

    result.weights = std::move(weights);
    return result;
}

ProbeResult train_linear_probe(const Mat& features, const std::vector<int>& labels,
                               int num_classes, double l2_penalty, int max_iters, uint64_t seed) {
    const size_t n = features.rows;
    const size_t e = features.cols;
    if (n < static_cast<size_t>(num_classes))
        throw InvalidParam("train_linear_probe: need at least one sample per class");
    if (labels.size() != n) throw DimMismatch("train_linear_probe: label count mismatch");
    if (num_classes < 2) throw InvalidParam("train_linear_probe: need >= 2 classes");
    if (max_iters < 1) throw InvalidParam("train_linear_probe: max_iters must be >= 1");
    if (l2_penalty < 0.0) throw InvalidParam("train_linear_probe: l2_penalty must be >= 0");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const size_t n_heldout = std::max<size_t>(1, n / 5);
    const size_t n_train = n - n_heldout;
    if (n_train == 0) throw InvalidParam("train_linear_probe: too few samples to split");

    LinearProbe probe;
    probe.classifier.w = Mat(static_cast<size_t>(num_classes), e);
    probe.classifier.b = Vec(static_cast<size_t>(num_classes), 0.0);

    const double step_size = 0.1;
    Mat w_grad(static_cast<size_t>(num_classes), e);
    Vec b_grad(static_cast<size_t>(num_classes));
    Vec probs(static_cast<size_t>(num_classes));

    for (int it = 0; it < max_iters; ++it) {
        std::fill(w_grad.data.begin(), w_grad.data.end(), 0.0);
        std::fill(b_grad.begin(), b_grad.end(), 0.0);
        for (size_t k = 0; k < n_train; ++k) {
            const size_t i = order[k];
            const int y = labels[i];
            if (y < 0 || y >= num_classes)
                throw LabelOutOfRange("train_linear_probe: label " + std::to_string(y));
            Vec logit = probe.classifier.logits(features.row(i));
            const double m = *std::max_element(logit.begin(), logit.end());
            double s = 0.0;
            for (size_t j = 0; j < probs.size(); ++j) {
                probs[j] = std::exp(logit[j] - m);
                s += probs[j];
            }
            for (size_t j = 0; j < probs.size(); ++j) {
                const double g = probs[j] / s - (static_cast<size_t>(y) == j ? 1.0 : 0.0);
                b_grad[j] += g;
                double* row = w_grad.data.data() + j * e;
                auto f = features.row(i);
                for (size_t c = 0; c < e; ++c) row[c] += g * f[c];
            }
        }
        const double inv = 1.0 / static_cast<double>(n_train);
        for (size_t j = 0; j < w_grad.data.size(); ++j)
            w_grad.data[j] = w_grad.data[j] * inv + l2_penalty * probe.classifier.w.data[j];
        for (auto& x : b_grad) x *= inv;
        for (size_t j = 0; j < w_grad.data.size(); ++j)
            probe.classifier.w.data[j] -= step_size * w_grad.data[j];
        for (size_t j = 0; j < b_grad.size(); ++j) probe.classifier.b[j] -= step_size * b_grad[j];
    }

    size_t correct = 0;
    for (size_t k = n_train; k < n; ++k) {
        const size_t i = order[k];
        Vec logit = probe.classifier.logits(features.row(i));
        const size_t pred =
            static_cast<size_t>(std::max_element(logit.begin(), logit.end()) - logit.begin());
        if (static_cast<int>(pred) == labels[i]) ++correct;
    }

    ProbeResult result;
    result.probe = std::move(probe);
    result.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(n_heldout);
    return result;
}

Mat embed_all(const Weights& weights, const MlpSpec& spec, const Mat& features) {
    Mat z(features.rows, static_cast<size_t>(spec.proj_dim));
    for (size_t i = 0; i < features.rows; ++i) {
        auto res = forward(weights, spec, features.row(i));
        z.set_row(i, res.z);
    }
    return z;
}

Mat penultimate_all(const Weights& weights, const MlpSpec& spec, const Mat& features) {
    Mat p(features.rows, static_cast<size_t>(spec.penultimate_dim));
    for (size_t i = 0; i < features.rows; ++i) {
        auto res = forward(weights, spec, features.row(i));
        p.set_row(i, res.penultimate);
    }
    return p;
}

}  // namespace hypood
