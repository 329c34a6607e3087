#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hypood {

using Vec = std::vector<double>;

// Row-major dense matrix. Small and unclever on purpose: every consumer in
// this library works at desk scale.
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }

    std::span<double> row(size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(size_t r) const { return {data.data() + r * cols, cols}; }

    Vec row_vec(size_t r) const {
        auto s = row(r);
        return Vec(s.begin(), s.end());
    }

    void set_row(size_t r, std::span<const double> v) {
        for (size_t c = 0; c < cols; ++c) at(r, c) = v[c];
    }
};

// Guard below which a vector is treated as having no meaningful direction.
inline constexpr double kEpsNorm = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

// Throws ZeroVector if ||v|| <= kEpsNorm.
Vec l2_normalize(std::span<const double> v);

// Backward pass of u = v / ||v||: applies the Jacobian
// (I - u u^T) / ||v|| to the upstream gradient. Exactly annihilates the
// radial direction.
Vec l2_normalize_backward(std::span<const double> u, double v_norm,
                          std::span<const double> upstream);

struct CosineDegrees {
    double cosine;
    double degrees;
};

// Both inputs must be unit norm within 1e-6, else NotUnit. The dot product
// is clamped to [-1, 1] before acos.
CosineDegrees cosine_degrees(std::span<const double> u, std::span<const double> v);

double cosine_to_degrees(double cosine);

// Forward declaration; defined in prototypes.hpp.
struct PrototypeBank;

// Shared covariance of residuals z_i - mu_{y_i}, normalized by the total
// sample count, symmetrized and ridge-regularized so the result is SPD even
// when classes collapse onto their prototypes. Ridge:
// 1e-6 * max(trace/d, 1e-12).
Mat shared_covariance(const Mat& embeddings, const std::vector<int>& labels,
                      const PrototypeBank& prototypes);

// Lower-triangular Cholesky factor of an SPD matrix. Throws NotSPD when the
// factorization breaks down.
struct CholeskyFactor {
    Mat lower;

    // Solves L y = b and returns ||y||^2 = b^T (L L^T)^{-1} b.
    double quadform(std::span<const double> diff) const;
};

CholeskyFactor cholesky(const Mat& spd);

// diff^T sigma^{-1} diff via triangular solve; never forms the inverse.
double mahalanobis_quadform(const Mat& spd, std::span<const double> diff);

bool all_finite(std::span<const double> v);

}  // namespace hypood
