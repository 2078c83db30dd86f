#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emgal/types.hpp"

namespace emgal {

/// Generator for a synthetic latent space with a known dependent variable:
/// classes sit on orthogonal axes, the auxiliary state shifts samples along
/// one reserved axis, and Gaussian noise is added on top. Every expected
/// distance is hand-computable from the parameters.
struct SyntheticSpec {
    int dim = 8;
    int n_classes = 4;
    int n_states = 2;
    double class_separation = 4.0;
    double aux_shift = 3.0;
    double noise_sigma = 0.1;
    int samples_per_cell = 40;  // per (class, state)
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimRecord {
    Embedding embedding;
    std::string class_label;
    std::string state;
};

/// Deterministic for a fixed seed. Class i centers at class_separation * e_i;
/// state s adds aux_shift * (2s/(n_states-1) - 1) * e_{n_classes}, so the
/// offsets span [-aux_shift, +aux_shift] along the reserved axis.
std::vector<SimRecord> generate(const SyntheticSpec& spec);

struct CellCount {
    std::string class_label;
    std::string state;
    int queries = 0;
};

struct BenchReport {
    double acc_unconditioned = 0.0;
    double acc_conditioned = 0.0;
    double unknown_rate_unconditioned = 0.0;
    double unknown_rate_conditioned = 0.0;
    std::vector<CellCount> per_cell;
};

struct EvalOutcome {
    std::string true_class;
    std::string state;
    std::string unconditioned_label;
    std::string conditioned_label;
};

struct EvalOptions {
    double split_fraction = 0.5;
    std::uint64_t seed = 0;
    /// Match the unconditioned protocol against nearest records instead of
    /// class centroids.
    bool unconditioned_nearest_record = false;
};

/// Splits every (class, state) cell into gallery and query halves (seeded),
/// then scores two protocols on the queries: unconditioned matching against
/// per-class overall centroids with threshold tau, and conditioned matching
/// via a supervised (class, state) centroid model with the query's true
/// state declared. Accuracy counts exact label matches; UNKNOWN counts as
/// wrong.
BenchReport evaluate(const std::vector<SimRecord>& dataset, double tau,
                     const EvalOptions& options = {},
                     std::vector<EvalOutcome>* outcomes = nullptr);

}  // namespace emgal
