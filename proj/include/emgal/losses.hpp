#pragma once

#include <span>
#include <utility>
#include <vector>

#include "emgal/metrics.hpp"
#include "emgal/types.hpp"

namespace emgal {

/// Hinge margins in latent-space distance units. `m` is the primary margin;
/// `m2` is the secondary quadruplet margin and must satisfy m2 <= m there.
struct Margin {
    double m = 0.0;
    double m2 = 0.0;
};

/// Pair label convention: 1 marks a similar pair (same class), 0 a dissimilar
/// pair. With this convention the loss reads literally as
/// y*d^2 + (1-y)*max(0, m-d)^2, pulling similar pairs together.
enum class PairLabel : int { dissimilar = 0, similar = 1 };

/// Pair loss y*d^2 + (1-y)*max(0, m - d)^2 with d = distance(metric, xi, xj).
double contrastive_loss(const Embedding& xi, const Embedding& xj, PairLabel y, const Margin& margin,
                        const MetricId& metric);

/// Hinge max(0, m + d_ap - d_an) on precomputed anchor-positive and
/// anchor-negative distances.
double triplet_loss(double d_ap, double d_an, const Margin& margin);

/// Sum of triplet hinges over a batch of (d_ap, d_an) pairs.
double triplet_loss_batch(std::span<const std::pair<double, double>> distances,
                          const Margin& margin);

/// Two-hinge form max(0, m + d_ap - d_an) + max(0, m2 + d_ap - d_n1n2) with
/// margins m >= m2; d_n1n2 is the distance between the two negatives.
double quadruplet_loss(double d_ap, double d_an, double d_n1n2, const Margin& margin);

struct PairGrad {
    double loss = 0.0;
    Embedding d_xi;
    Embedding d_xj;
};

struct TripletGrad {
    double loss = 0.0;
    Embedding d_anchor;
    Embedding d_positive;
    Embedding d_negative;
};

struct QuadrupletGrad {
    double loss = 0.0;
    Embedding d_anchor;
    Embedding d_positive;
    Embedding d_negative1;
    Embedding d_negative2;
};

/// Analytic gradients with respect to each input embedding. Only euclidean
/// and squared_euclidean metrics are supported (Errc::unsupported_metric
/// otherwise). The euclidean derivative at coincident points takes the zero
/// subgradient. Inactive hinges yield zero vectors.
PairGrad contrastive_loss_grad(const Embedding& xi, const Embedding& xj, PairLabel y,
                               const Margin& margin, const MetricId& metric);

TripletGrad triplet_loss_grad(const Embedding& anchor, const Embedding& positive,
                              const Embedding& negative, const Margin& margin,
                              const MetricId& metric);

QuadrupletGrad quadruplet_loss_grad(const Embedding& anchor, const Embedding& positive,
                                    const Embedding& negative1, const Embedding& negative2,
                                    const Margin& margin, const MetricId& metric);

}  // namespace emgal
