#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hypood/errors.hpp"
#include "hypood/trainer.hpp"
#include "oracles.hpp"

using namespace hypood;

namespace {

MlpSpec tiny_spec(int input_dim = 6) {
    MlpSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims = {12};
    spec.penultimate_dim = 10;
    spec.proj_dim = 5;
    return spec;
}

bool weights_equal(const Weights& a, const Weights& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].w.data != b.layers[l].w.data || a.layers[l].b != b.layers[l].b)
            return false;
    return true;
}

}  // namespace

TEST_CASE("cosine_lr schedule anchors") {
    CHECK(cosine_lr(0, 100, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(cosine_lr(100, 100, 0.5) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cosine_lr(50, 100, 0.5) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_lr(-1, 100, 0.5), InvalidParam);
    CHECK_THROWS_AS(cosine_lr(101, 100, 0.5), InvalidParam);
    CHECK_THROWS_AS(cosine_lr(0, 0, 0.5), InvalidParam);
}

TEST_CASE("sgd_step basics and two-step recurrence") {
    MlpSpec spec = tiny_spec();
    Weights w = init_weights(spec, 1);
    Weights orig = w;
    WeightGrads state = zero_grads(spec);
    WeightGrads zero = zero_grads(spec);

    sgd_step(w, zero, state, 0.1, 0.9, 0.0);
    CHECK(weights_equal(w, orig));
    CHECK(w.version == orig.version + 1);

    // Single step, no momentum: w - lr * g.
    WeightGrads g = zero_grads(spec);
    for (auto& layer : g.layers) std::fill(layer.w.data.begin(), layer.w.data.end(), 2.0);
    Weights w1 = orig;
    WeightGrads s1 = zero_grads(spec);
    sgd_step(w1, g, s1, 0.1, 0.0, 0.0);
    for (size_t l = 0; l < w1.layers.size(); ++l)
        for (size_t i = 0; i < w1.layers[l].w.data.size(); ++i)
            CHECK(w1.layers[l].w.data[i] ==
                  doctest::Approx(orig.layers[l].w.data[i] - 0.2).epsilon(1e-15));

    // Two steps with constant gradient and momentum m:
    // v1 = g, w1 = w0 - lr g; v2 = m g + g, w2 = w0 - lr g (2 + m).
    const double m = 0.7, lr = 0.05, gval = 1.3;
    for (auto& layer : g.layers) {
        std::fill(layer.w.data.begin(), layer.w.data.end(), gval);
        std::fill(layer.b.begin(), layer.b.end(), gval);
    }
    Weights w2 = orig;
    WeightGrads s2 = zero_grads(spec);
    sgd_step(w2, g, s2, lr, m, 0.0);
    sgd_step(w2, g, s2, lr, m, 0.0);
    const double expected_delta = lr * gval * (2.0 + m);
    for (size_t l = 0; l < w2.layers.size(); ++l)
        for (size_t i = 0; i < w2.layers[l].b.size(); ++i)
            CHECK(w2.layers[l].b[i] ==
                  doctest::Approx(orig.layers[l].b[i] - expected_delta).epsilon(1e-14));

    // Weight decay folds into the gradient.
    Weights w3 = orig;
    WeightGrads s3 = zero_grads(spec);
    sgd_step(w3, zero, s3, 0.1, 0.0, 0.5);
    for (size_t l = 0; l < w3.layers.size(); ++l)
        for (size_t i = 0; i < w3.layers[l].w.data.size(); ++i)
            CHECK(w3.layers[l].w.data[i] ==
                  doctest::Approx(orig.layers[l].w.data[i] * (1.0 - 0.1 * 0.5)).epsilon(1e-14));
}

TEST_CASE("momentum state mirrors weight shapes") {
    MlpSpec spec = tiny_spec();
    WeightGrads state = zero_grads(spec);
    Weights w = init_weights(spec, 2);
    REQUIRE(state.layers.size() == w.layers.size());
    for (size_t l = 0; l < state.layers.size(); ++l) {
        CHECK(state.layers[l].w.rows == w.layers[l].w.rows);
        CHECK(state.layers[l].w.cols == w.layers[l].w.cols);
        CHECK(state.layers[l].b.size() == w.layers[l].b.size());
    }
}

TEST_CASE("process_batch gradients match finite differences through the EMA chain") {
    // This is the full Algorithm-1 gradient path: loss -> prototypes ->
    // EMA updates -> embeddings -> encoder weights.
    MlpSpec spec = tiny_spec(4);
    Rng rng(5);
    const size_t n_views = 6;
    Mat views(n_views, 4);
    for (auto& x : views.data) x = rng.normal();
    std::vector<int> labels{0, 0, 1, 1, 2, 2};

    for (auto update_mode : {PrototypeUpdateMode::PerSample, PrototypeUpdateMode::PerBatch}) {
        for (bool detach : {false, true}) {
            Weights w = init_weights(spec, 21);
            PrototypeBank bank0;
            Rng brng(77);
            bank0 = init_random(3, spec.proj_dim, 0.8, brng);

            LossConfig cfg;
            cfg.kind = LossKind::Cider;
            cfg.tau = 0.2;
            cfg.detach_prototypes = detach;

            // For detach mode the value function freezes the prototypes at
            // their post-update state; otherwise the EMA chain is part of
            // the differentiated function.
            PrototypeBank frozen = bank0;
            if (detach)
                process_batch(w, spec, nullptr, views, labels, frozen, cfg, update_mode, false);

            LossWithGrad fn = [&](const Weights& weights, WeightGrads* grads) {
                PrototypeBank bank = detach ? frozen : bank0;
                auto mode = detach ? PrototypeUpdateMode::Frozen : update_mode;
                if (grads) {
                    PrototypeBank gbank = bank0;
                    auto res = process_batch(weights, spec, nullptr, views, labels, gbank, cfg,
                                             update_mode, true);
                    *grads = std::move(res.weight_grads);
                    PrototypeBank vbank = bank;
                    return process_batch(weights, spec, nullptr, views, labels, vbank, cfg, mode,
                                         false)
                        .loss;
                }
                auto res =
                    process_batch(weights, spec, nullptr, views, labels, bank, cfg, mode, false);
                return res.loss;
            };
            auto report = grad_check(w, fn, 1e-5, 400, 3);
            CAPTURE(detach);
            CHECK(report.worst_rel_error < 1e-5);
        }
    }
}

TEST_CASE("train with zero epochs returns inputs unchanged") {
    MlpSpec spec = tiny_spec();
    auto data = make_blobs(3, 10, 6, 3.0, 0.3, 4);
    Weights w = init_weights(spec, 9);
    Weights orig = w;
    TrainConfig cfg;
    cfg.epochs = 0;
    auto result = train(std::move(w), spec, data, cfg);
    CHECK(weights_equal(result.weights, orig));
    CHECK(result.history.empty());
    CHECK(result.bank.num_classes() == 3);
}

TEST_CASE("train is bit-deterministic in the seed") {
    MlpSpec spec = tiny_spec();
    auto data = make_blobs(3, 12, 6, 4.0, 0.4, 11);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr0 = 0.05;
    cfg.seed = 42;

    auto r1 = train(init_weights(spec, cfg.seed), spec, data, cfg);
    auto r2 = train(init_weights(spec, cfg.seed), spec, data, cfg);
    CHECK(weights_equal(r1.weights, r2.weights));
    CHECK(r1.bank.mu.data == r2.bank.mu.data);
    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t e = 0; e < r1.history.size(); ++e) {
        CHECK(r1.history[e].loss == r2.history[e].loss);
        CHECK(r1.history[e].lr == r2.history[e].lr);
        CHECK(r1.history[e].dispersion_deg == r2.history[e].dispersion_deg);
        CHECK(r1.history[e].compactness_deg == r2.history[e].compactness_deg);
    }

    auto r3 = train(init_weights(spec, 43), spec, data, cfg);
    CHECK_FALSE(weights_equal(r1.weights, r3.weights));
}

TEST_CASE("recorded loss equals an independent objectives call") {
    // One batch, one step, augmentation disabled: replay Algorithm 1 by hand
    // at the pre-step weights with post-update prototypes.
    MlpSpec spec = tiny_spec();
    auto data = make_blobs(2, 4, 6, 3.0, 0.2, 31);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;  // single batch of all 8 samples
    cfg.augment_noise_sigma = 0.0;
    cfg.augment_scale_lo = 1.0;
    cfg.augment_scale_hi = 1.0;
    cfg.seed = 17;

    Weights w0 = init_weights(spec, cfg.seed);
    auto result = train(w0, spec, data, cfg);
    REQUIRE(result.history.size() == 1);

    // Recompute: shuffle with the trainer's stream, both views equal the
    // input, per-sample EMA updates in view order, cider loss.
    Rng rng(cfg.seed);
    Rng shuffle_rng = rng.derive(1, 0);  // kStreamShuffle, epoch 0
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    PrototypeBank bank = init_from_data(w0, spec, data, cfg.prototype_alpha);
    Mat z(2 * data.size(), static_cast<size_t>(spec.proj_dim));
    std::vector<int> labels(2 * data.size());
    for (size_t k = 0; k < order.size(); ++k) {
        auto res = forward(w0, spec, data.features.row(order[k]));
        z.set_row(2 * k, res.z);
        z.set_row(2 * k + 1, res.z);
        labels[2 * k] = data.labels[order[k]];
        labels[2 * k + 1] = data.labels[order[k]];
    }
    for (size_t i = 0; i < z.rows; ++i) ema_update(bank, z.row(i), labels[i], false);
    auto expected = cider_loss(z, labels, bank, cfg.loss);
    CHECK(result.history[0].loss == doctest::Approx(expected.value).epsilon(1e-12));
}

TEST_CASE("cider loss trends downward on separable blobs") {
    MlpSpec spec = tiny_spec(8);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 16;
    cfg.lr0 = 0.05;
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        auto data = make_blobs(3, 16, 8, 4.0, 0.0, 100 + seed);
        cfg.seed = seed;
        auto result = train(init_weights(spec, seed), spec, data, cfg);
        CAPTURE(seed);
        CHECK(result.history[19].loss < result.history[0].loss);
    }
}

TEST_CASE("prototypes and embeddings stay unit norm during training") {
    MlpSpec spec = tiny_spec();
    auto data = make_blobs(3, 10, 6, 3.0, 0.3, 51);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 3;

    double worst = 0.0;
    auto observer = [&](const StepInfo& info) {
        for (int c = 0; c < info.bank.num_classes(); ++c)
            worst = std::max(worst,
                             std::abs(norm(info.bank.mu.row(static_cast<size_t>(c))) - 1.0));
        for (size_t i = 0; i < info.view_embeddings.rows; ++i)
            worst = std::max(worst, std::abs(norm(info.view_embeddings.row(i)) - 1.0));
    };
    train(init_weights(spec, 3), spec, data, cfg, observer);
    CHECK(worst <= 1e-8);
}

TEST_CASE("alpha = 1 leaves the bank bit-identical to initialization") {
    MlpSpec spec = tiny_spec();
    auto data = make_blobs(3, 8, 6, 3.0, 0.2, 61);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.prototype_alpha = 1.0;
    cfg.seed = 5;

    Weights w0 = init_weights(spec, cfg.seed);
    PrototypeBank init_bank = init_from_data(w0, spec, data, 1.0);
    auto result = train(w0, spec, data, cfg);
    CHECK(result.bank.mu.data == init_bank.mu.data);
}

TEST_CASE("classifier-backed loss kinds train end to end") {
    MlpSpec spec = tiny_spec();
    auto data = make_blobs(3, 12, 6, 4.0, 0.3, 71);
    for (auto kind : {LossKind::CrossEntropy, LossKind::Triple}) {
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch_size = 12;
        cfg.loss.kind = kind;
        cfg.seed = 9;
        auto result = train(init_weights(spec, 9), spec, data, cfg);
        CHECK(result.has_classifier);
        CHECK(result.history.size() == 2);
        CHECK(std::isfinite(result.history.back().loss));
    }
}

TEST_CASE("linear probe on separable clusters reaches perfect held-out accuracy") {
    Rng rng(81);
    const size_t n = 60;
    Mat features(n, 4);
    std::vector<int> labels(n);
    for (size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        labels[i] = c;
        for (size_t k = 0; k < 4; ++k)
            features.at(i, k) = (c == 0 ? 3.0 : -3.0) + 0.1 * rng.normal();
    }
    auto result = train_linear_probe(features, labels, 2, 1e-4, 200, 7);
    CHECK(result.heldout_accuracy == 1.0);
}

TEST_CASE("linear probe on shuffled labels is near chance") {
    Rng rng(91);
    const size_t n = 400;
    Mat features(n, 6);
    for (auto& x : features.data) x = rng.normal();
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.bounded(4));
    auto result = train_linear_probe(features, labels, 4, 1e-4, 300, 11);
    CHECK(result.heldout_accuracy == doctest::Approx(0.25).epsilon(0.45));
    CHECK(std::abs(result.heldout_accuracy - 0.25) <= 0.1);
}

TEST_CASE("linear probe on constant features predicts the majority class") {
    const size_t n = 50;
    Mat features(n, 3, 1.0);
    std::vector<int> labels(n);
    for (size_t i = 0; i < n; ++i) labels[i] = i < 35 ? 0 : 1;  // prior 0.7
    auto result = train_linear_probe(features, labels, 2, 1e-4, 300, 13);
    // Held-out fold composition fluctuates around the prior.
    CHECK(result.heldout_accuracy >= 0.5);

    CHECK_THROWS_AS(train_linear_probe(features, labels, 60, 1e-4, 10, 1), InvalidParam);
}

TEST_CASE("history csv uses the documented columns") {
    TrainHistory history;
    history.push_back({0, 1.5, 0.05, 90.0, 10.0, 0.01});
    const auto path =
        (std::filesystem::temp_directory_path() / "hypood_history_test.csv").string();
    save_history_csv(path, history);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,loss,lr,dispersion_deg,compactness_deg,seconds");
    std::filesystem::remove(path);
}
