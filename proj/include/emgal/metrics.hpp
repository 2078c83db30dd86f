#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "emgal/types.hpp"

namespace emgal {

enum class MetricKind {
    euclidean,
    squared_euclidean,
    manhattan,
    chebyshev,
    minkowski,
    cosine,
    correlation,
    hamming,
    mahalanobis,
};

const char* metric_kind_name(MetricKind kind) noexcept;
std::optional<MetricKind> metric_kind_from_name(std::string_view name) noexcept;

/// Identifies a distance function plus its parameters. Minkowski carries the
/// order p >= 1; Mahalanobis carries a caller-supplied inverse covariance
/// (symmetric, dim x dim, positive semi-definite). The engine never estimates
/// the matrix itself.
struct MetricId {
    MetricKind kind = MetricKind::euclidean;
    double minkowski_p = 2.0;
    Matrix inverse_covariance;

    static MetricId euclidean() { return {MetricKind::euclidean, 2.0, {}}; }
    static MetricId squared_euclidean() { return {MetricKind::squared_euclidean, 2.0, {}}; }
    static MetricId manhattan() { return {MetricKind::manhattan, 2.0, {}}; }
    static MetricId chebyshev() { return {MetricKind::chebyshev, 2.0, {}}; }
    static MetricId minkowski(double p) { return {MetricKind::minkowski, p, {}}; }
    static MetricId cosine() { return {MetricKind::cosine, 2.0, {}}; }
    static MetricId correlation() { return {MetricKind::correlation, 2.0, {}}; }
    static MetricId hamming() { return {MetricKind::hamming, 2.0, {}}; }
    static MetricId mahalanobis(Matrix inverse_covariance) {
        return {MetricKind::mahalanobis, 2.0, std::move(inverse_covariance)};
    }

    bool operator==(const MetricId& other) const {
        if (kind != other.kind) return false;
        if (kind == MetricKind::minkowski && minkowski_p != other.minkowski_p) return false;
        if (kind == MetricKind::mahalanobis &&
            (inverse_covariance.rows() != other.inverse_covariance.rows() ||
             inverse_covariance.cols() != other.inverse_covariance.cols() ||
             inverse_covariance != other.inverse_covariance))
            return false;
        return true;
    }
};

/// Checks metric parameters against a given embedding dimension. Throws
/// Errc::invalid_metric_params on p < 1 or an asymmetric / wrongly sized
/// Mahalanobis matrix.
void validate_metric(const MetricId& metric, Eigen::Index dim);

namespace detail {

double mahalanobis_distance(const Matrix& inverse_covariance, const Embedding& diff);

[[noreturn]] void throw_degenerate(const char* which);
[[noreturn]] void throw_non_binary();

}  // namespace detail

/// Unit-normalizes a vector expression. Throws Errc::zero_vector when the
/// L2 norm is at or below 1e-12.
template <typename Derived>
Embedding normalize(const Eigen::MatrixBase<Derived>& x) {
    const double n = x.norm();
    if (n <= 1e-12) fail(Errc::zero_vector, "cannot normalize a (near-)zero vector");
    return x.derived() / n;
}

/// Distance between two embedding expressions under `metric`. Result is
/// always >= 0. Cosine and correlation are 1 - cos(angle), correlation after
/// mean-centering each argument; Hamming counts differing entries and
/// requires every entry to be exactly 0 or 1.
template <typename DerivedX, typename DerivedY>
double distance(const MetricId& metric, const Eigen::MatrixBase<DerivedX>& x,
                const Eigen::MatrixBase<DerivedY>& y) {
    if (x.size() != y.size())
        fail(Errc::dimension_mismatch, "distance: dims differ: " + std::to_string(x.size()) +
                                           " vs " + std::to_string(y.size()));
    validate_metric(metric, x.size());

    switch (metric.kind) {
        case MetricKind::euclidean:
            return (x - y).norm();
        case MetricKind::squared_euclidean:
            return (x - y).squaredNorm();
        case MetricKind::manhattan:
            return (x - y).cwiseAbs().sum();
        case MetricKind::chebyshev:
            return (x - y).cwiseAbs().maxCoeff();
        case MetricKind::minkowski:
            return std::pow((x - y).cwiseAbs().array().pow(metric.minkowski_p).sum(),
                            1.0 / metric.minkowski_p);
        case MetricKind::cosine: {
            const double nx = x.norm();
            const double ny = y.norm();
            if (nx <= 1e-12 || ny <= 1e-12) detail::throw_degenerate("cosine");
            const double c = x.dot(y) / (nx * ny);
            return 1.0 - std::clamp(c, -1.0, 1.0);
        }
        case MetricKind::correlation: {
            const Embedding cx = x.derived().array() - x.mean();
            const Embedding cy = y.derived().array() - y.mean();
            const double nx = cx.norm();
            const double ny = cy.norm();
            if (nx <= 1e-12 || ny <= 1e-12) detail::throw_degenerate("correlation");
            const double c = cx.dot(cy) / (nx * ny);
            return 1.0 - std::clamp(c, -1.0, 1.0);
        }
        case MetricKind::hamming: {
            const auto binary = [](double v) { return v == 0.0 || v == 1.0; };
            if (!x.derived().unaryExpr([&](double v) { return binary(v) ? 1.0 : 0.0; }).all() ||
                !y.derived().unaryExpr([&](double v) { return binary(v) ? 1.0 : 0.0; }).all())
                detail::throw_non_binary();
            return static_cast<double>((x.derived().array() != y.derived().array()).count());
        }
        case MetricKind::mahalanobis: {
            const Embedding diff = x - y;
            return detail::mahalanobis_distance(metric.inverse_covariance, diff);
        }
    }
    fail(Errc::invalid_metric_params, "unhandled metric kind");
}

}  // namespace emgal
