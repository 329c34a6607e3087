#include "hypood/prototypes.hpp"

#include <string>

#include "hypood/datagen.hpp"
#include "hypood/encoder.hpp"
#include "hypood/errors.hpp"

namespace hypood {

Vec EmaJacobian::apply_wrt_z(std::span<const double> upstream) const {
    Vec g = l2_normalize_backward(mu_new, v_norm, upstream);
    for (auto& x : g) x *= (1.0 - alpha);
    return g;
}

Vec EmaJacobian::apply_wrt_mu(std::span<const double> upstream) const {
    // alpha == 1 is implemented as an exact no-op, whose Jacobian is the
    // identity rather than the normalization projector.
    if (alpha == 1.0) return Vec(upstream.begin(), upstream.end());
    Vec g = l2_normalize_backward(mu_new, v_norm, upstream);
    for (auto& x : g) x *= alpha;
    return g;
}

PrototypeBank init_from_data(const Weights& weights, const MlpSpec& spec,
                             const LabeledDataset& dataset, double alpha) {
    if (dataset.num_classes < 2) throw InvalidParam("init_from_data: need at least 2 classes");
    const size_t d = static_cast<size_t>(spec.proj_dim);
    Mat sums(static_cast<size_t>(dataset.num_classes), d);
    std::vector<size_t> counts(static_cast<size_t>(dataset.num_classes), 0);

    for (size_t i = 0; i < dataset.size(); ++i) {
        const int y = dataset.labels[i];
        if (y < 0 || y >= dataset.num_classes)
            throw LabelOutOfRange("init_from_data: label " + std::to_string(y));
        auto res = forward(weights, spec, dataset.features.row(i));
        ++counts[static_cast<size_t>(y)];
        for (size_t k = 0; k < d; ++k) sums.at(static_cast<size_t>(y), k) += res.z[k];
    }

    PrototypeBank bank;
    bank.alpha = alpha;
    bank.mu = Mat(static_cast<size_t>(dataset.num_classes), d);
    bank.update_count.assign(static_cast<size_t>(dataset.num_classes), 0);
    for (int c = 0; c < dataset.num_classes; ++c) {
        if (counts[static_cast<size_t>(c)] == 0)
            throw EmptyClass("init_from_data: class " + std::to_string(c) + " has no samples");
        Vec mean(d);
        const double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
        for (size_t k = 0; k < d; ++k) mean[k] = sums.at(static_cast<size_t>(c), k) * inv;
        Vec mu;
        try {
            mu = l2_normalize(mean);
        } catch (const ZeroVector&) {
            throw ZeroVector("init_from_data: class " + std::to_string(c) +
                             " mean embedding vanished");
        }
        bank.mu.set_row(static_cast<size_t>(c), mu);
    }
    return bank;
}

PrototypeBank init_random(int num_classes, int dim, double alpha, Rng& rng) {
    if (num_classes < 2) throw InvalidParam("init_random: need at least 2 classes");
    if (dim < 2) throw InvalidParam("init_random: need dim >= 2");
    PrototypeBank bank;
    bank.alpha = alpha;
    bank.mu = Mat(static_cast<size_t>(num_classes), static_cast<size_t>(dim));
    bank.update_count.assign(static_cast<size_t>(num_classes), 0);
    for (int c = 0; c < num_classes; ++c)
        bank.mu.set_row(static_cast<size_t>(c), rng.unit_vector(dim));
    return bank;
}

std::optional<EmaJacobian> ema_update(PrototypeBank& bank, std::span<const double> z, int class_id,
                                      bool differentiable) {
    if (class_id < 0 || class_id >= bank.num_classes())
        throw LabelOutOfRange("ema_update: class " + std::to_string(class_id));
    if (z.size() != static_cast<size_t>(bank.dim())) throw DimMismatch("ema_update: dim mismatch");
    const double alpha = bank.alpha;
    auto mu = bank.mu.row(static_cast<size_t>(class_id));
    ++bank.update_count[static_cast<size_t>(class_id)];

    if (alpha == 1.0) {
        // Exact fixed point; avoids renormalization drift so frozen banks
        // stay bit-identical.
        if (!differentiable) return std::nullopt;
        EmaJacobian jac;
        jac.mu_new = Vec(mu.begin(), mu.end());
        jac.v_norm = 1.0;
        jac.alpha = 1.0;
        return jac;
    }

    Vec v(z.size());
    for (size_t k = 0; k < v.size(); ++k) v[k] = alpha * mu[k] + (1.0 - alpha) * z[k];
    const double v_norm = norm(v);
    if (!(v_norm > kEpsNorm))
        throw ZeroVector("ema_update: alpha*mu + (1-alpha)*z vanished for class " +
                         std::to_string(class_id));
    const double inv = 1.0 / v_norm;
    for (auto& x : v) x *= inv;
    bank.mu.set_row(static_cast<size_t>(class_id), v);

    if (!differentiable) return std::nullopt;
    EmaJacobian jac;
    jac.mu_new = std::move(v);
    jac.v_norm = v_norm;
    jac.alpha = alpha;
    return jac;
}

}  // namespace hypood
