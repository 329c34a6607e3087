#include "hypood/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hypood/errors.hpp"

namespace hypood {

LossKind parse_loss_kind(const std::string& name) {
    if (name == "cider") return LossKind::Cider;
    if (name == "comp_only") return LossKind::CompOnly;
    if (name == "dis_only") return LossKind::DisOnly;
    if (name == "ce") return LossKind::CrossEntropy;
    if (name == "supcon") return LossKind::SupCon;
    if (name == "triple") return LossKind::Triple;
    if (name == "supcon_cider") return LossKind::SupConCider;
    throw ConfigError("unknown loss kind: " + name);
}

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::Cider: return "cider";
        case LossKind::CompOnly: return "comp_only";
        case LossKind::DisOnly: return "dis_only";
        case LossKind::CrossEntropy: return "ce";
        case LossKind::SupCon: return "supcon";
        case LossKind::Triple: return "triple";
        case LossKind::SupConCider: return "supcon_cider";
    }
    return "?";
}

bool loss_uses_prototypes(LossKind kind) {
    switch (kind) {
        case LossKind::CrossEntropy:
        case LossKind::SupCon: return false;
        default: return true;
    }
}

bool loss_uses_classifier(LossKind kind) {
    return kind == LossKind::CrossEntropy || kind == LossKind::Triple;
}

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("LossConfig: tau must be > 0");
    if (!(lambda_c >= 0.0) || !std::isfinite(lambda_c))
        throw ConfigError("LossConfig: lambda_c must be finite and >= 0");
    if (!(lambda_d >= 0.0) || !std::isfinite(lambda_d))
        throw ConfigError("LossConfig: lambda_d must be finite and >= 0");
}

namespace {

void axpy(double a, const Mat& x, Mat& y) {
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

}  // namespace

LossOutput dispersion_loss(const PrototypeBank& bank, double tau) {
    const int C = bank.num_classes();
    const size_t d = static_cast<size_t>(bank.dim());
    if (C < 2) throw InvalidParam("dispersion_loss: need at least 2 prototypes");
    if (!(tau > 0.0)) throw InvalidParam("dispersion_loss: tau must be > 0");

    // Pairwise similarities.
    Mat sim(static_cast<size_t>(C), static_cast<size_t>(C));
    for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j)
            sim.at(static_cast<size_t>(i), static_cast<size_t>(j)) =
                i == j ? 0.0
                       : dot(bank.mu.row(static_cast<size_t>(i)),
                             bank.mu.row(static_cast<size_t>(j))) /
                             tau;

    LossOutput out;
    out.grad_z = Mat(0, d);
    out.grad_proto = Mat(static_cast<size_t>(C), d);

    // Softmax weights p_ij over j != i, max-shifted per anchor.
    Mat p(static_cast<size_t>(C), static_cast<size_t>(C));
    double total = 0.0;
    for (int i = 0; i < C; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < C; ++j)
            if (j != i) m = std::max(m, sim.at(static_cast<size_t>(i), static_cast<size_t>(j)));
        double s = 0.0;
        for (int j = 0; j < C; ++j)
            if (j != i)
                s += std::exp(sim.at(static_cast<size_t>(i), static_cast<size_t>(j)) - m);
        total += m + std::log(s) - std::log(static_cast<double>(C - 1));
        for (int j = 0; j < C; ++j)
            if (j != i)
                p.at(static_cast<size_t>(i), static_cast<size_t>(j)) =
                    std::exp(sim.at(static_cast<size_t>(i), static_cast<size_t>(j)) - m) / s;
    }
    out.value = total / static_cast<double>(C);

    // d/d mu_k: (1/(C tau)) [ sum_{j != k} p_kj mu_j + sum_{i != k} p_ik mu_i ].
    const double scale = 1.0 / (static_cast<double>(C) * tau);
    for (int k = 0; k < C; ++k) {
        auto gk = out.grad_proto.row(static_cast<size_t>(k));
        for (int j = 0; j < C; ++j) {
            if (j == k) continue;
            const double w = p.at(static_cast<size_t>(k), static_cast<size_t>(j)) +
                             p.at(static_cast<size_t>(j), static_cast<size_t>(k));
            auto mj = bank.mu.row(static_cast<size_t>(j));
            for (size_t t = 0; t < d; ++t) gk[t] += scale * w * mj[t];
        }
    }
    return out;
}

LossOutput compactness_loss(const Mat& z_batch, const std::vector<int>& labels,
                            const PrototypeBank& bank, double tau, bool mean_reduce) {
    const size_t b = z_batch.rows;
    const size_t d = z_batch.cols;
    const int C = bank.num_classes();
    if (!(tau > 0.0)) throw InvalidParam("compactness_loss: tau must be > 0");
    if (labels.size() != b) throw DimMismatch("compactness_loss: label count mismatch");
    if (d != static_cast<size_t>(bank.dim()))
        throw DimMismatch("compactness_loss: embedding dim mismatch");

    LossOutput out;
    out.grad_z = Mat(b, d);
    out.grad_proto = Mat(static_cast<size_t>(C), d);
    const double reduce = mean_reduce ? 1.0 / static_cast<double>(b) : 1.0;

    Vec logits(static_cast<size_t>(C));
    Vec probs(static_cast<size_t>(C));
    double total = 0.0;
    for (size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= C)
            throw LabelOutOfRange("compactness_loss: label " + std::to_string(y) + " at row " +
                                  std::to_string(i));
        auto z = z_batch.row(i);
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < C; ++j) {
            logits[static_cast<size_t>(j)] = dot(z, bank.mu.row(static_cast<size_t>(j))) / tau;
            m = std::max(m, logits[static_cast<size_t>(j)]);
        }
        double s = 0.0;
        for (int j = 0; j < C; ++j) {
            probs[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - m);
            s += probs[static_cast<size_t>(j)];
        }
        for (auto& pj : probs) pj /= s;
        total += (m + std::log(s)) - logits[static_cast<size_t>(y)];

        // dL_i/dz_i = (sum_j p_j mu_j - mu_y) / tau
        auto gz = out.grad_z.row(i);
        for (int j = 0; j < C; ++j) {
            const double w = (probs[static_cast<size_t>(j)] - (j == y ? 1.0 : 0.0)) / tau;
            auto mj = bank.mu.row(static_cast<size_t>(j));
            for (size_t t = 0; t < d; ++t) gz[t] += reduce * w * mj[t];
            // dL_i/dmu_j = (p_j - 1{j==y}) z_i / tau
            auto gp = out.grad_proto.row(static_cast<size_t>(j));
            for (size_t t = 0; t < d; ++t) gp[t] += reduce * w * z[t];
        }
    }
    out.value = total * reduce;
    return out;
}

LossOutput cider_loss(const Mat& z_batch, const std::vector<int>& labels,
                      const PrototypeBank& bank, const LossConfig& config) {
    auto dis = dispersion_loss(bank, config.tau);
    auto comp = compactness_loss(z_batch, labels, bank, config.tau, config.mean_reduce);

    LossOutput out;
    out.value = config.lambda_d * dis.value + config.lambda_c * comp.value;
    out.grad_z = Mat(z_batch.rows, z_batch.cols);
    axpy(config.lambda_c, comp.grad_z, out.grad_z);
    out.grad_proto = Mat(bank.mu.rows, bank.mu.cols);
    axpy(config.lambda_d, dis.grad_proto, out.grad_proto);
    axpy(config.lambda_c, comp.grad_proto, out.grad_proto);
    return out;
}

LossOutput cross_entropy_loss(const Mat& logits, const std::vector<int>& labels) {
    const size_t b = logits.rows;
    const size_t C = logits.cols;
    if (labels.size() != b) throw DimMismatch("cross_entropy_loss: label count mismatch");
    if (b == 0) throw EmptyDataset("cross_entropy_loss: empty batch");

    LossOutput out;
    out.grad_z = Mat(0, 0);
    out.grad_proto = Mat(0, 0);
    out.grad_logits = Mat(b, C);
    const double inv_b = 1.0 / static_cast<double>(b);

    double total = 0.0;
    for (size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<size_t>(y) >= C)
            throw LabelOutOfRange("cross_entropy_loss: label " + std::to_string(y));
        auto row = logits.row(i);
        const double m = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (size_t j = 0; j < C; ++j) s += std::exp(row[j] - m);
        total += (m + std::log(s)) - row[static_cast<size_t>(y)];
        auto g = out.grad_logits->row(i);
        for (size_t j = 0; j < C; ++j)
            g[j] = (std::exp(row[j] - m) / s - (static_cast<size_t>(y) == j ? 1.0 : 0.0)) * inv_b;
    }
    out.value = total * inv_b;
    return out;
}

LossOutput supcon_loss(const Mat& z_views, const std::vector<int>& labels, double tau) {
    const size_t n = z_views.rows;
    const size_t d = z_views.cols;
    if (!(tau > 0.0)) throw InvalidParam("supcon_loss: tau must be > 0");
    if (labels.size() != n) throw DimMismatch("supcon_loss: label count mismatch");
    if (n < 2) throw InvalidParam("supcon_loss: need at least 2 samples");

    // Positive index sets.
    std::vector<std::vector<size_t>> positives(n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t p = 0; p < n; ++p)
            if (p != i && labels[p] == labels[i]) positives[i].push_back(p);
        if (positives[i].empty())
            throw NoPositives("supcon_loss: anchor " + std::to_string(i) +
                              " has no positive partner");
    }

    Mat sim(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t a = 0; a < n; ++a)
            if (a != i) sim.at(i, a) = dot(z_views.row(i), z_views.row(a)) / tau;

    LossOutput out;
    out.grad_z = Mat(n, d);
    out.grad_proto = Mat(0, d);

    // q_ia = softmax over a != i of sim; per-anchor max shift.
    Mat q(n, n);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (size_t a = 0; a < n; ++a)
            if (a != i) m = std::max(m, sim.at(i, a));
        double s = 0.0;
        for (size_t a = 0; a < n; ++a)
            if (a != i) s += std::exp(sim.at(i, a) - m);
        const double logden = m + std::log(s);
        for (size_t a = 0; a < n; ++a)
            if (a != i) q.at(i, a) = std::exp(sim.at(i, a) - m) / s;
        const double inv_p = 1.0 / static_cast<double>(positives[i].size());
        for (size_t p : positives[i]) total -= inv_p * (sim.at(i, p) - logden);
    }
    out.value = total;

    // dL/dz_k = (1/tau) [ sum_{a != k} (q_ka - 1{a in P(k)}/|P(k)|) z_a
    //                    + sum_{i != k} (q_ik - 1{k in P(i)}/|P(i)|) z_i ].
    for (size_t k = 0; k < n; ++k) {
        auto gk = out.grad_z.row(k);
        const double inv_pk = 1.0 / static_cast<double>(positives[k].size());
        for (size_t a = 0; a < n; ++a) {
            if (a == k) continue;
            const bool a_pos_of_k = labels[a] == labels[k];
            const bool k_pos_of_a = a_pos_of_k;  // symmetric relation
            const double inv_pa = 1.0 / static_cast<double>(positives[a].size());
            double w = (q.at(k, a) - (a_pos_of_k ? inv_pk : 0.0)) +
                       (q.at(a, k) - (k_pos_of_a ? inv_pa : 0.0));
            auto za = z_views.row(a);
            for (size_t t = 0; t < d; ++t) gk[t] += w * za[t] / tau;
        }
    }
    return out;
}

LossOutput combined_loss(const Mat& z_batch, const std::vector<int>& labels,
                         const PrototypeBank& bank, const Mat* logits, const LossConfig& config) {
    config.validate();
    switch (config.kind) {
        case LossKind::Cider: return cider_loss(z_batch, labels, bank, config);
        case LossKind::CompOnly: {
            auto comp = compactness_loss(z_batch, labels, bank, config.tau, config.mean_reduce);
            comp.value *= config.lambda_c;
            for (auto& x : comp.grad_z.data) x *= config.lambda_c;
            for (auto& x : comp.grad_proto.data) x *= config.lambda_c;
            return comp;
        }
        case LossKind::DisOnly: {
            auto dis = dispersion_loss(bank, config.tau);
            dis.value *= config.lambda_d;
            for (auto& x : dis.grad_proto.data) x *= config.lambda_d;
            dis.grad_z = Mat(z_batch.rows, z_batch.cols);
            return dis;
        }
        case LossKind::CrossEntropy: {
            if (!logits) throw InvalidParam("combined_loss: cross-entropy needs logits");
            auto ce = cross_entropy_loss(*logits, labels);
            ce.grad_z = Mat(z_batch.rows, z_batch.cols);
            ce.grad_proto = Mat(bank.mu.rows, bank.mu.cols);
            return ce;
        }
        case LossKind::SupCon: {
            auto sup = supcon_loss(z_batch, labels, config.tau);
            sup.grad_proto = Mat(bank.mu.rows, bank.mu.cols);
            return sup;
        }
        case LossKind::Triple: {
            if (!logits) throw InvalidParam("combined_loss: triple needs logits");
            auto out = cider_loss(z_batch, labels, bank, config);
            auto ce = cross_entropy_loss(*logits, labels);
            out.value += ce.value;
            out.grad_logits = std::move(ce.grad_logits);
            return out;
        }
        case LossKind::SupConCider: {
            auto out = cider_loss(z_batch, labels, bank, config);
            auto sup = supcon_loss(z_batch, labels, config.tau);
            out.value += sup.value;
            axpy(1.0, sup.grad_z, out.grad_z);
            return out;
        }
    }
    throw InvalidParam("combined_loss: unhandled kind");
}

}  // namespace hypood
