#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "emgal/aux_schema.hpp"
#include "emgal/gallery.hpp"
#include "emgal/metrics.hpp"
#include "emgal/types.hpp"

namespace emgal {

/// Fisher-style scatter report for one auxiliary variable: per eligible class
/// the between-state scatter B and within-state scatter W, and the mean B/W
/// ratio across classes. Large scores mark variables whose states displace
/// embeddings inside a class.
struct SaliencyReport {
    std::string variable;
    double score = 0.0;
    std::map<std::string, std::pair<double, double>> per_class;  // class -> (B, W)
};

/// Scores how salient a background variable is for the gallery's classes.
/// For each class observing >= 2 states:
///   B = sum_s (n_s/n) * |mu_s - mu|^2,  W = sum_s sum_{x in s} |x - mu_s|^2 / n
/// and the score is the mean of B / (W + 1e-12) over those classes, with
/// B = 0 mapping to ratio 0. Records lacking the variable do not participate.
SaliencyReport saliency(const Gallery& gallery, const std::string& variable);

struct KMeansResult {
    Matrix centroids;             // k x dim
    std::vector<int> assignments;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // per Lloyd iteration, winning restart
};

/// Lloyd's algorithm from k-means++ seeding, best of `n_init` restarts by
/// inertia (sum of squared euclidean distances to assigned centroids).
/// Deterministic for a fixed seed. Clusters that empty out are re-seeded on
/// the point currently farthest from its centroid.
KMeansResult kmeans(const std::vector<Embedding>& points, int k, std::uint64_t seed,
                    int max_iter = 100, double tol = 1e-6, int n_init = 10);

enum class ConditionMode { supervised, kmeans };

const char* condition_mode_name(ConditionMode mode) noexcept;
std::optional<ConditionMode> condition_mode_from_name(std::string_view name) noexcept;

/// Per (class, state) centroids over the latent space for one auxiliary
/// variable, fitted either from the recorded states directly (supervised) or
/// by per-class k-means with k = number of observed states, clusters labeled
/// by majority state.
struct ClusterModel {
    std::string variable;
    ConditionMode mode = ConditionMode::supervised;
    int dim = 0;
    std::map<std::pair<std::string, std::string>, Embedding> centroids;  // (class, state)
    std::map<std::pair<std::string, std::string>, int> counts;

    void save(const std::string& path) const;
    static ClusterModel load(const std::string& path);
};

ClusterModel fit_condition_model(const Gallery& gallery, const std::string& variable,
                                 ConditionMode mode, std::uint64_t seed = 0);

/// Open-set query against the centroids whose state matches the declared
/// state of the model's variable. Classes without a matching-state centroid
/// are excluded. When no centroid matches at all, falls back to the
/// unconditioned nearest-record query with `conditioned = false`.
QueryResult conditioned_query(const Gallery& gallery, const ClusterModel& model,
                              const Embedding& query, const AuxStates& declared_states,
                              double tau);

}  // namespace emgal
