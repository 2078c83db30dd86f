#include "emgal/losses.hpp"

#include <cmath>

namespace emgal {
namespace {

void check_margin(const Margin& margin, bool quadruplet) {
    if (margin.m < 0.0 || !std::isfinite(margin.m))
        fail(Errc::invalid_margins, "margin m must be non-negative");
    if (quadruplet) {
        if (margin.m2 < 0.0 || !std::isfinite(margin.m2))
            fail(Errc::invalid_margins, "margin m2 must be non-negative");
        if (margin.m2 > margin.m) fail(Errc::invalid_margins, "quadruplet requires m2 <= m");
    }
}

void check_distance(double d, const char* name) {
    if (d < 0.0) fail(Errc::negative_distance, std::string(name) + " must be non-negative");
}

void check_grad_metric(const MetricId& metric) {
    if (metric.kind != MetricKind::euclidean && metric.kind != MetricKind::squared_euclidean)
        fail(Errc::unsupported_metric,
             std::string("gradients support euclidean and squared_euclidean only, got ") +
                 metric_kind_name(metric.kind));
}

// Distance and its derivative with respect to the first argument; the
// derivative with respect to the second is the negation. At d = 0 the
// euclidean derivative takes the zero subgradient.
struct DistGrad {
    double d;
    Embedding wrt_first;
};

DistGrad distance_grad(const MetricId& metric, const Embedding& x, const Embedding& y) {
    require_same_dim(x, y);
    const Embedding diff = x - y;
    if (metric.kind == MetricKind::squared_euclidean) {
        return {diff.squaredNorm(), 2.0 * diff};
    }
    const double d = diff.norm();
    if (d == 0.0) return {0.0, Embedding::Zero(x.size())};
    return {d, diff / d};
}

}  // namespace

double contrastive_loss(const Embedding& xi, const Embedding& xj, PairLabel y,
                        const Margin& margin, const MetricId& metric) {
    check_margin(margin, false);
    const double d = distance(metric, xi, xj);
    if (y == PairLabel::similar) return d * d;
    const double hinge = std::max(0.0, margin.m - d);
    return hinge * hinge;
}

double triplet_loss(double d_ap, double d_an, const Margin& margin) {
    check_margin(margin, false);
    check_distance(d_ap, "d_ap");
    check_distance(d_an, "d_an");
    return std::max(0.0, margin.m + d_ap - d_an);
}

double triplet_loss_batch(std::span<const std::pair<double, double>> distances,
                          const Margin& margin) {
    double total = 0.0;
    for (const auto& [d_ap, d_an] : distances) total += triplet_loss(d_ap, d_an, margin);
    return total;
}

double quadruplet_loss(double d_ap, double d_an, double d_n1n2, const Margin& margin) {
    check_margin(margin, true);
    check_distance(d_ap, "d_ap");
    check_distance(d_an, "d_an");
    check_distance(d_n1n2, "d_n1n2");
    return std::max(0.0, margin.m + d_ap - d_an) + std::max(0.0, margin.m2 + d_ap - d_n1n2);
}

PairGrad contrastive_loss_grad(const Embedding& xi, const Embedding& xj, PairLabel y,
                               const Margin& margin, const MetricId& metric) {
    check_margin(margin, false);
    check_grad_metric(metric);
    const auto [d, dd_dxi] = distance_grad(metric, xi, xj);

    PairGrad out;
    if (y == PairLabel::similar) {
        out.loss = d * d;
        out.d_xi = 2.0 * d * dd_dxi;
    } else {
        const double hinge = std::max(0.0, margin.m - d);
        out.loss = hinge * hinge;
        out.d_xi = hinge > 0.0 ? Embedding(-2.0 * hinge * dd_dxi)
                               : Embedding(Embedding::Zero(xi.size()));
    }
    out.d_xj = -out.d_xi;
    return out;
}

TripletGrad triplet_loss_grad(const Embedding& anchor, const Embedding& positive,
                              const Embedding& negative, const Margin& margin,
                              const MetricId& metric) {
    check_margin(margin, false);
    check_grad_metric(metric);
    const auto ap = distance_grad(metric, anchor, positive);
    const auto an = distance_grad(metric, anchor, negative);

    TripletGrad out;
    out.loss = std::max(0.0, margin.m + ap.d - an.d);
    if (out.loss > 0.0) {
        out.d_anchor = ap.wrt_first - an.wrt_first;
        out.d_positive = -ap.wrt_first;
        out.d_negative = an.wrt_first;
    } else {
        out.d_anchor = Embedding::Zero(anchor.size());
        out.d_positive = Embedding::Zero(anchor.size());
        out.d_negative = Embedding::Zero(anchor.size());
    }
    return out;
}

QuadrupletGrad quadruplet_loss_grad(const Embedding& anchor, const Embedding& positive,
                                    const Embedding& negative1, const Embedding& negative2,
                                    const Margin& margin, const MetricId& metric) {
    check_margin(margin, true);
    check_grad_metric(metric);
    const auto ap = distance_grad(metric, anchor, positive);
    const auto an = distance_grad(metric, anchor, negative1);
    const auto nn = distance_grad(metric, negative1, negative2);

    QuadrupletGrad out;
    out.d_anchor = Embedding::Zero(anchor.size());
    out.d_positive = Embedding::Zero(anchor.size());
    out.d_negative1 = Embedding::Zero(anchor.size());
    out.d_negative2 = Embedding::Zero(anchor.size());

    const double hinge1 = std::max(0.0, margin.m + ap.d - an.d);
    if (hinge1 > 0.0) {
        out.d_anchor += ap.wrt_first - an.wrt_first;
        out.d_positive -= ap.wrt_first;
        out.d_negative1 += an.wrt_first;
    }
    const double hinge2 = std::max(0.0, margin.m2 + ap.d - nn.d);
    if (hinge2 > 0.0) {
        out.d_anchor += ap.wrt_first;
        out.d_positive -= ap.wrt_first;
        out.d_negative1 -= nn.wrt_first;
        out.d_negative2 += nn.wrt_first;
    }
    out.loss = hinge1 + hinge2;
    return out;
}

}  // namespace emgal
