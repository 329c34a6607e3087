#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hypood/errors.hpp"
#include "hypood/evaluation.hpp"
#include "oracles.hpp"

using namespace hypood;
namespace fs = std::filesystem;

namespace {

PrototypeBank bank_of(std::vector<Vec> rows) {
    PrototypeBank bank;
    bank.mu = Mat(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) bank.mu.set_row(i, rows[i]);
    bank.update_count.assign(rows.size(), 0);
    return bank;
}

PrototypeBank random_bank(Rng& rng, int C, int d) {
    PrototypeBank bank;
    bank.mu = oracle::random_unit_rows(rng, static_cast<size_t>(C), d);
    bank.update_count.assign(static_cast<size_t>(C), 0);
    return bank;
}

}  // namespace

TEST_CASE("dispersion_metric anchors") {
    auto antipodal = bank_of({Vec{1.0, 0.0}, Vec{-1.0, 0.0}});
    auto r = dispersion_metric(antipodal);
    CHECK(r.cosine == doctest::Approx(-1.0));
    CHECK(r.degrees == doctest::Approx(180.0));

    const double s = std::sqrt(3.0) / 2.0;
    auto tri = bank_of({Vec{1.0, 0.0}, Vec{-0.5, s}, Vec{-0.5, -s}});
    auto r3 = dispersion_metric(tri);
    CHECK(r3.cosine == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(r3.degrees == doctest::Approx(120.0).epsilon(1e-9));
}

TEST_CASE("dispersion_metric matches the loop oracle and ignores row order") {
    Rng rng(2);
    auto bank = random_bank(rng, 6, 8);
    CHECK(std::abs(dispersion_metric(bank).cosine -
                   oracle::dispersion_cosine_loop(bank.mu)) <= 1e-12);

    auto shuffled = bank_of({bank.mu.row_vec(5), bank.mu.row_vec(3), bank.mu.row_vec(0),
                             bank.mu.row_vec(1), bank.mu.row_vec(4), bank.mu.row_vec(2)});
    CHECK(dispersion_metric(bank).degrees ==
          doctest::Approx(dispersion_metric(shuffled).degrees).epsilon(1e-12));
}

TEST_CASE("compactness_metric anchors") {
    auto bank = bank_of({Vec{1.0, 0.0}, Vec{0.0, 1.0}});
    Mat z(4, 2);
    z.set_row(0, Vec{1.0, 0.0});
    z.set_row(1, Vec{1.0, 0.0});
    z.set_row(2, Vec{0.0, 1.0});
    z.set_row(3, Vec{0.0, 1.0});
    std::vector<int> labels{0, 0, 1, 1};
    for (auto form : {CompactnessForm::Literal, CompactnessForm::PerClassMean}) {
        auto r = compactness_metric(z, labels, bank, form);
        CHECK(r.cosine == doctest::Approx(1.0));
        CHECK(r.degrees == doctest::Approx(0.0));
    }

    // Every sample at 60 degrees from its prototype.
    const double c60 = 0.5, s60 = std::sqrt(3.0) / 2.0;
    Mat z60(2, 2);
    z60.set_row(0, Vec{c60, s60});
    z60.set_row(1, Vec{s60, c60});
    auto r60 = compactness_metric(z60, {0, 1}, bank, CompactnessForm::Literal);
    CHECK(r60.degrees == doctest::Approx(60.0).epsilon(1e-12));
}

TEST_CASE("compactness_metric matches the loop oracle; forms differ under imbalance") {
    Rng rng(3);
    auto bank = random_bank(rng, 3, 6);
    Mat z = oracle::random_unit_rows(rng, 40, 6);
    std::vector<int> labels(40);
    for (size_t i = 0; i < 40; ++i) labels[i] = i < 30 ? 0 : (i < 36 ? 1 : 2);

    auto lit = compactness_metric(z, labels, bank, CompactnessForm::Literal);
    CHECK(std::abs(lit.cosine - oracle::compactness_cosine_loop(z, labels, bank.mu)) <= 1e-12);

    // Per-class-mean weighs classes equally, so the two readings disagree
    // on this imbalanced set.
    auto pcm = compactness_metric(z, labels, bank, CompactnessForm::PerClassMean);
    CHECK(std::abs(lit.cosine - pcm.cosine) > 1e-6);

    CHECK_THROWS_AS(compactness_metric(z, std::vector<int>(40, 7), bank,
                                       CompactnessForm::Literal),
                    LabelOutOfRange);
}

TEST_CASE("separability_metric anchors") {
    auto bank = bank_of({Vec{1.0, 0.0, 0.0}, Vec{0.0, 1.0, 0.0}});
    Mat id(2, 3);
    id.set_row(0, Vec{1.0, 0.0, 0.0});
    id.set_row(1, Vec{0.0, 1.0, 0.0});
    Mat ood(2, 3);
    ood.set_row(0, Vec{0.0, 0.0, 1.0});
    ood.set_row(1, Vec{0.0, 0.0, -1.0});
    CHECK(separability_metric(id, ood, bank) == doctest::Approx(90.0).epsilon(1e-12));
    CHECK(separability_metric(id, id, bank) == 0.0);
}

TEST_CASE("separability_metric matches the loop oracle in both forms") {
    Rng rng(5);
    auto bank = random_bank(rng, 4, 8);
    Mat id = oracle::random_unit_rows(rng, 30, 8);
    Mat ood = oracle::random_unit_rows(rng, 25, 8);

    CHECK(std::abs(separability_metric(id, ood, bank, SeparabilityForm::MeanAngles) -
                   oracle::separability_deg_loop(id, ood, bank.mu)) <= 1e-10);

    // Raw Eq-style cosine difference: recompute with a loop.
    double id_sum = 0.0, ood_sum = 0.0;
    for (size_t i = 0; i < id.rows; ++i) {
        double best = -2.0;
        for (size_t c = 0; c < 4; ++c) best = std::max(best, dot(id.row(i), bank.mu.row(c)));
        id_sum += best;
    }
    for (size_t i = 0; i < ood.rows; ++i) {
        double best = -2.0;
        for (size_t c = 0; c < 4; ++c) best = std::max(best, dot(ood.row(i), bank.mu.row(c)));
        ood_sum += best;
    }
    const double raw = ood_sum / 25.0 - id_sum / 30.0;
    CHECK(separability_metric(id, ood, bank, SeparabilityForm::RawCosine) ==
          doctest::Approx(raw).epsilon(1e-12));
}

TEST_CASE("mahalanobis_score anchors") {
    auto bank = bank_of({Vec{1.0, 0.0}, Vec{0.0, 1.0}});
    Mat eye(2, 2);
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    auto factor = cholesky(eye);

    CHECK(mahalanobis_score(Vec{1.0, 0.0}, bank, factor) == doctest::Approx(0.0));
    // z = -e1: nearest prototype is e2 at squared distance 2.
    CHECK(mahalanobis_score(Vec{-1.0, 0.0}, bank, factor) == doctest::Approx(-2.0));
}

TEST_CASE("mahalanobis_score matches the explicit-inverse argmin oracle") {
    Rng rng(7);
    auto bank = random_bank(rng, 5, 6);
    Mat sigma = oracle::random_spd(rng, 6);
    auto factor = cholesky(sigma);
    for (int trial = 0; trial < 20; ++trial) {
        Vec z = rng.unit_vector(6);
        double best = 1e300;
        for (size_t c = 0; c < 5; ++c) {
            Vec diff(6);
            for (size_t k = 0; k < 6; ++k) diff[k] = z[k] - bank.mu.at(c, k);
            best = std::min(best, oracle::quadform_explicit_inverse(sigma, diff));
        }
        CHECK(std::abs(mahalanobis_score(z, bank, factor) + best) <= 1e-8 * (1.0 + best));
    }
}

TEST_CASE("mahalanobis with identity covariance is negated nearest squared distance") {
    Rng rng(8);
    auto bank = random_bank(rng, 4, 5);
    Mat eye(5, 5);
    for (size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0;
    auto factor = cholesky(eye);
    for (int trial = 0; trial < 10; ++trial) {
        Vec z = rng.unit_vector(5);
        double best = 1e300;
        for (size_t c = 0; c < 4; ++c) {
            double d2 = 0.0;
            for (size_t k = 0; k < 5; ++k) {
                const double diff = z[k] - bank.mu.at(c, k);
                d2 += diff * diff;
            }
            best = std::min(best, d2);
        }
        CHECK(std::abs(mahalanobis_score(z, bank, factor) + best) <= 1e-12);
    }
}

TEST_CASE("max_cosine_score") {
    auto bank = bank_of({Vec{1.0, 0.0, 0.0}, Vec{0.0, 1.0, 0.0}});
    CHECK(max_cosine_score(Vec{1.0, 0.0, 0.0}, bank) == doctest::Approx(1.0));
    CHECK(max_cosine_score(Vec{0.0, 0.0, 1.0}, bank) == doctest::Approx(0.0));

    Rng rng(9);
    auto rbank = random_bank(rng, 5, 7);
    for (int trial = 0; trial < 10; ++trial) {
        Vec z = rng.unit_vector(7);
        double best = -2.0;
        for (size_t c = 0; c < 5; ++c) best = std::max(best, dot(z, rbank.mu.row(c)));
        CHECK(max_cosine_score(z, rbank) == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("msp_score") {
    LinearProbe probe;
    probe.classifier.w = Mat(3, 2);  // zero weights: uniform logits
    probe.classifier.b = Vec(3, 0.0);
    CHECK(msp_score(probe, Vec{0.4, -0.2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    probe.classifier.b = Vec{100.0, 0.0, 0.0};
    CHECK(msp_score(probe, Vec{0.0, 0.0}) == doctest::Approx(1.0).epsilon(1e-10));

    Rng rng(10);
    probe.classifier.w = Mat(3, 2);
    for (auto& x : probe.classifier.w.data) x = rng.normal();
    probe.classifier.b = Vec{0.1, -0.2, 0.3};
    Vec f{0.7, -1.1};
    Vec logits = probe.classifier.logits(f);
    double den = 0.0, best = -1e300;
    for (double l : logits) {
        den += std::exp(l);
        best = std::max(best, l);
    }
    CHECK(msp_score(probe, f) == doctest::Approx(std::exp(best) / den).epsilon(1e-12));
}

TEST_CASE("fpr_at_95tpr anchors") {
    std::vector<double> id;
    for (int i = 1; i <= 100; ++i) id.push_back(i);
    std::vector<double> zeros(50, 0.0);
    CHECK(fpr95_threshold(id) == 6.0);
    CHECK(fpr_at_95tpr(id, zeros) == 0.0);

    // OOD identical in distribution to ID: FPR 0.95.
    CHECK(fpr_at_95tpr(id, id) == doctest::Approx(0.95));

    CHECK_THROWS_AS(fpr_at_95tpr(std::vector<double>(19, 1.0), zeros), TooFewSamples);
}

TEST_CASE("fpr_at_95tpr matches the exhaustive sweep oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t n_id = 20 + rng.bounded(180);
        const size_t n_ood = 1 + rng.bounded(200);
        std::vector<double> id(n_id), ood(n_ood);
        // Coarse grid forces ties.
        for (auto& s : id) s = static_cast<double>(rng.bounded(40));
        for (auto& s : ood) s = static_cast<double>(rng.bounded(40)) - 5.0;
        CHECK(fpr_at_95tpr(id, ood) == oracle::fpr95_sweep(id, ood));
    }
}

TEST_CASE("fpr_at_95tpr is monotone when OOD scores shift down") {
    Rng rng(12);
    std::vector<double> id(60), ood(50);
    for (auto& s : id) s = rng.normal();
    for (auto& s : ood) s = rng.normal();
    const double base = fpr_at_95tpr(id, ood);
    std::vector<double> shifted = ood;
    for (auto& s : shifted) s -= 0.5;
    CHECK(fpr_at_95tpr(id, shifted) <= base);
}

TEST_CASE("auroc anchors") {
    CHECK(auroc({10.0, 11.0, 12.0}, {1.0, 2.0}) == 1.0);
    CHECK(auroc({1.0, 3.0}, {2.0}) == doctest::Approx(0.5));
    CHECK(auroc({1.0, 2.0}, {2.0, 0.0}) == doctest::Approx(0.625));
}

TEST_CASE("auroc matches exhaustive pairwise comparison exactly") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t n_id = 1 + rng.bounded(200);
        const size_t n_ood = 1 + rng.bounded(200);
        std::vector<double> id(n_id), ood(n_ood);
        for (auto& s : id) s = static_cast<double>(rng.bounded(30));
        for (auto& s : ood) s = static_cast<double>(rng.bounded(30)) - 3.0;
        CHECK(auroc(id, ood) == oracle::auroc_pairwise(id, ood));
    }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
    Rng rng(14);
    std::vector<double> id(80), ood(70);
    for (auto& s : id) s = rng.normal(1.0, 1.0);
    for (auto& s : ood) s = rng.normal(0.0, 1.0);
    const double base = auroc(id, ood);

    auto apply = [](std::vector<double> v, auto&& f) {
        for (auto& x : v) x = f(x);
        return v;
    };
    auto exp_t = [](double x) { return std::exp(x); };
    auto affine_t = [](double x) { return 3.0 * x + 7.0; };
    CHECK(std::abs(auroc(apply(id, exp_t), apply(ood, exp_t)) - base) <= 1e-12);
    CHECK(std::abs(auroc(apply(id, affine_t), apply(ood, affine_t)) - base) <= 1e-12);

    // Tie-free complement identity.
    CHECK(auroc(ood, id) == doctest::Approx(1.0 - base).epsilon(1e-12));
}

TEST_CASE("decide thresholding") {
    CHECK(decide(1.0, 1.0) == Decision::Id);
    CHECK(decide(1.0 - 1e-9, 1.0) == Decision::Ood);

    // The threshold from fpr95 maps at least 95% of ID scores to ID.
    Rng rng(15);
    std::vector<double> id(137);
    for (auto& s : id) s = rng.normal();
    const double lambda = fpr95_threshold(id);
    size_t as_id = 0;
    for (double s : id)
        if (decide(s, lambda) == Decision::Id) ++as_id;
    CHECK(static_cast<double>(as_id) >= 0.95 * static_cast<double>(id.size()));
}

TEST_CASE("report document round-trips and renders") {
    DetectionReport report;
    report.scorer_names = {"mahalanobis", "msp"};
    report.checkpoint_id = "checkpoint.json";
    report.train_seed = 1;
    report.data_seed = 7;
    report.subsample_seed = 99;
    report.dispersion_deg = 101.25;
    report.compactness_deg = 12.5;
    report.probe_accuracy = 0.9875;
    OodSetReport set;
    set.name = "between";
    set.separability_deg = 33.3;
    set.scorers = {{"mahalanobis", {0.05, 0.97}}, {"msp", {0.4, 0.81}}};
    report.ood_sets.push_back(set);

    const auto path = (fs::temp_directory_path() / "hypood_report_test.json").string();
    save_report(path, report);
    auto loaded = load_report(path);
    CHECK(loaded.scorer_names == report.scorer_names);
    CHECK(loaded.dispersion_deg == report.dispersion_deg);
    CHECK(loaded.probe_accuracy == report.probe_accuracy);
    REQUIRE(loaded.ood_sets.size() == 1);
    CHECK(loaded.ood_sets[0].separability_deg == 33.3);
    CHECK(loaded.ood_sets[0].scorers == set.scorers);

    // Serialization is deterministic.
    CHECK(report_to_json(report) == report_to_json(loaded));

    auto table = format_report_table(report);
    CHECK(table.find("mahalanobis") != std::string::npos);
    CHECK(table.find("between") != std::string::npos);
    fs::remove(path);
}

TEST_CASE("scores csv round-trips") {
    ScoreSet scores;
    scores.id_scores = {1.5, 2.5, -0.25};
    scores.ood_scores = {{"between", {0.5, -1.0}}, {"uniform", {3.25}}};
    const auto path = (fs::temp_directory_path() / "hypood_scores_test.csv").string();
    save_scores_csv(path, scores);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "sample_index,set_name,score");

    auto loaded = load_scores_csv(path);
    CHECK(loaded.id_scores == scores.id_scores);
    CHECK(loaded.ood("between") == scores.ood_scores[0].second);
    CHECK(loaded.ood("uniform") == scores.ood_scores[1].second);
    CHECK_THROWS_AS(loaded.ood("nope"), InvalidParam);
    fs::remove(path);
}
