#include "emgal/metrics.hpp"

namespace emgal {

const char* errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::dimension_mismatch: return "DimensionMismatch";
        case Errc::invalid_metric_params: return "InvalidMetricParams";
        case Errc::non_binary_input: return "NonBinaryInput";
        case Errc::degenerate_input: return "DegenerateInput";
        case Errc::zero_vector: return "ZeroVector";
        case Errc::non_finite_input: return "NonFiniteInput";
        case Errc::negative_distance: return "NegativeDistance";
        case Errc::invalid_margins: return "InvalidMargins";
        case Errc::unsupported_metric: return "UnsupportedMetric";
        case Errc::insufficient_classes: return "InsufficientClasses";
        case Errc::missing_groups: return "MissingGroups";
        case Errc::non_finite_loss: return "NonFiniteLoss";
        case Errc::empty_list: return "EmptyList";
        case Errc::unknown_aux_variable: return "UnknownAuxVariable";
        case Errc::unknown_class: return "UnknownClass";
        case Errc::duplicate_id: return "DuplicateId";
        case Errc::corrupt_file: return "CorruptFile";
        case Errc::version_mismatch: return "VersionMismatch";
        case Errc::insufficient_states: return "InsufficientStates";
        case Errc::unknown_variable: return "UnknownVariable";
        case Errc::k_too_large: return "KTooLarge";
        case Errc::empty_input: return "EmptyInput";
        case Errc::empty_gallery: return "EmptyGallery";
        case Errc::undeclared_variable: return "UndeclaredVariable";
        case Errc::too_few_points: return "TooFewPoints";
        case Errc::too_many_components: return "TooManyComponents";
        case Errc::invalid_spec: return "InvalidSpec";
        case Errc::cell_too_small: return "CellTooSmall";
        case Errc::invalid_config: return "InvalidConfig";
        case Errc::store_locked: return "StoreLocked";
        case Errc::io_error: return "IoError";
    }
    return "Error";
}

const char* metric_kind_name(MetricKind kind) noexcept {
    switch (kind) {
        case MetricKind::euclidean: return "euclidean";
        case MetricKind::squared_euclidean: return "squared_euclidean";
        case MetricKind::manhattan: return "manhattan";
        case MetricKind::chebyshev: return "chebyshev";
        case MetricKind::minkowski: return "minkowski";
        case MetricKind::cosine: return "cosine";
        case MetricKind::correlation: return "correlation";
        case MetricKind::hamming: return "hamming";
        case MetricKind::mahalanobis: return "mahalanobis";
    }
    return "unknown";
}

std::optional<MetricKind> metric_kind_from_name(std::string_view name) noexcept {
    for (MetricKind k :
         {MetricKind::euclidean, MetricKind::squared_euclidean, MetricKind::manhattan,
          MetricKind::chebyshev, MetricKind::minkowski, MetricKind::cosine,
          MetricKind::correlation, MetricKind::hamming, MetricKind::mahalanobis}) {
        if (name == metric_kind_name(k)) return k;
    }
    return std::nullopt;
}

void validate_metric(const MetricId& metric, Eigen::Index dim) {
    if (metric.kind == MetricKind::minkowski) {
        if (!(metric.minkowski_p >= 1.0) || !std::isfinite(metric.minkowski_p))
            fail(Errc::invalid_metric_params,
                 "minkowski order must satisfy p >= 1, got " + std::to_string(metric.minkowski_p));
    }
    if (metric.kind == MetricKind::mahalanobis) {
        const Matrix& m = metric.inverse_covariance;
        if (m.rows() != dim || m.cols() != dim)
            fail(Errc::invalid_metric_params,
                 "mahalanobis matrix must be " + std::to_string(dim) + "x" + std::to_string(dim));
        if (!m.allFinite())
            fail(Errc::invalid_metric_params, "mahalanobis matrix has non-finite entries");
        const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-9)
            fail(Errc::invalid_metric_params,
                 "mahalanobis matrix asymmetric (max |M - M^T| = " + std::to_string(asym) + ")");
    }
}

namespace detail {

double mahalanobis_distance(const Matrix& inverse_covariance, const Embedding& diff) {
    const double q = diff.dot(inverse_covariance * diff);
    if (q < -1e-9)
        fail(Errc::invalid_metric_params,
             "mahalanobis matrix is indefinite (quadratic form = " + std::to_string(q) + ")");
    return std::sqrt(std::max(q, 0.0));
}

void throw_degenerate(const char* which) {
    fail(Errc::degenerate_input,
         std::string(which) + " distance undefined on zero or constant vectors");
}

void throw_non_binary() {
    fail(Errc::non_binary_input, "hamming distance requires entries exactly 0 or 1");
}

}  // namespace detail

}  // namespace emgal
