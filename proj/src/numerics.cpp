#include "hypood/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hypood/errors.hpp"
#include "hypood/prototypes.hpp"

namespace hypood {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimMismatch("dot: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

Vec l2_normalize(std::span<const double> v) {
    const double n = norm(v);
    if (!(n > kEpsNorm)) throw ZeroVector("l2_normalize: norm " + std::to_string(n) + " below guard");
    Vec out(v.begin(), v.end());
    const double inv = 1.0 / n;
    for (auto& x : out) x *= inv;
    return out;
}

Vec l2_normalize_backward(std::span<const double> u, double v_norm,
                          std::span<const double> upstream) {
    const double radial = dot(u, upstream);
    Vec out(u.size());
    const double inv = 1.0 / v_norm;
    for (size_t i = 0; i < u.size(); ++i) out[i] = (upstream[i] - radial * u[i]) * inv;
    return out;
}

double cosine_to_degrees(double cosine) {
    const double c = std::clamp(cosine, -1.0, 1.0);
    return std::acos(c) * 180.0 / kPi;
}

CosineDegrees cosine_degrees(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw DimMismatch("cosine_degrees: size mismatch");
    if (std::abs(norm(u) - 1.0) > 1e-6 || std::abs(norm(v) - 1.0) > 1e-6)
        throw NotUnit("cosine_degrees: inputs must be unit norm within 1e-6");
    const double c = std::clamp(dot(u, v), -1.0, 1.0);
    return {c, cosine_to_degrees(c)};
}

Mat shared_covariance(const Mat& embeddings, const std::vector<int>& labels,
                      const PrototypeBank& prototypes) {
    const size_t n = embeddings.rows;
    const size_t d = embeddings.cols;
    if (n == 0) throw EmptyDataset("shared_covariance: no samples");
    if (labels.size() != n) throw DimMismatch("shared_covariance: label count mismatch");
    if (d != static_cast<size_t>(prototypes.dim()))
        throw DimMismatch("shared_covariance: embedding/prototype dim mismatch");

    Mat sigma(d, d);
    Vec diff(d);
    for (size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= prototypes.num_classes())
            throw LabelOutOfRange("shared_covariance: label " + std::to_string(y) + " at row " +
                                  std::to_string(i));
        auto z = embeddings.row(i);
        auto mu = prototypes.mu.row(static_cast<size_t>(y));
        for (size_t k = 0; k < d; ++k) diff[k] = z[k] - mu[k];
        for (size_t r = 0; r < d; ++r)
            for (size_t c = 0; c < d; ++c) sigma.at(r, c) += diff[r] * diff[c];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : sigma.data) x *= inv_n;

    // Symmetrize (accumulation order asymmetry), then ridge.
    for (size_t r = 0; r < d; ++r)
        for (size_t c = r + 1; c < d; ++c) {
            const double m = 0.5 * (sigma.at(r, c) + sigma.at(c, r));
            sigma.at(r, c) = m;
            sigma.at(c, r) = m;
        }
    double trace = 0.0;
    for (size_t k = 0; k < d; ++k) trace += sigma.at(k, k);
    const double ridge = 1e-6 * std::max(trace / static_cast<double>(d), 1e-12);
    for (size_t k = 0; k < d; ++k) sigma.at(k, k) += ridge;
    return sigma;
}

CholeskyFactor cholesky(const Mat& spd) {
    const size_t d = spd.rows;
    if (spd.cols != d) throw DimMismatch("cholesky: matrix not square");
    CholeskyFactor f;
    f.lower = Mat(d, d);
    for (size_t i = 0; i < d; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double sum = spd.at(i, j);
            for (size_t k = 0; k < j; ++k) sum -= f.lower.at(i, k) * f.lower.at(j, k);
            if (i == j) {
                if (!(sum > 0.0) || !std::isfinite(sum))
                    throw NotSPD("cholesky: pivot " + std::to_string(i) + " not positive");
                f.lower.at(i, i) = std::sqrt(sum);
            } else {
                f.lower.at(i, j) = sum / f.lower.at(j, j);
            }
        }
    }
    return f;
}

double CholeskyFactor::quadform(std::span<const double> diff) const {
    const size_t d = lower.rows;
    if (diff.size() != d) throw DimMismatch("quadform: dim mismatch");
    // Forward substitution L y = diff; the quadratic form is ||y||^2.
    Vec y(d);
    double q = 0.0;
    for (size_t i = 0; i < d; ++i) {
        double sum = diff[i];
        for (size_t k = 0; k < i; ++k) sum -= lower.at(i, k) * y[k];
        y[i] = sum / lower.at(i, i);
        q += y[i] * y[i];
    }
    return q;
}

double mahalanobis_quadform(const Mat& spd, std::span<const double> diff) {
    return cholesky(spd).quadform(diff);
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace hypood
