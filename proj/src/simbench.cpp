#include "emgal/simbench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "emgal/conditioning.hpp"
#include "emgal/gallery.hpp"
#include "emgal/random.hpp"

namespace emgal {
namespace {

std::string padded_label(const char prefix, int index, int total) {
    int width = 1;
    for (int v = total - 1; v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(index);
    std::string out(1, prefix);
    out.append(static_cast<std::size_t>(width) - digits.size(), '0');
    out += digits;
    return out;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (n_classes < 1) fail(Errc::invalid_spec, "n_classes must be >= 1");
    if (n_states < 1) fail(Errc::invalid_spec, "n_states must be >= 1");
    if (samples_per_cell < 2) fail(Errc::invalid_spec, "samples_per_cell must be >= 2");
    if (!(class_separation > 0.0)) fail(Errc::invalid_spec, "class_separation must be positive");
    if (aux_shift < 0.0) fail(Errc::invalid_spec, "aux_shift must be >= 0");
    if (noise_sigma < 0.0) fail(Errc::invalid_spec, "noise_sigma must be >= 0");
    const int min_dim = n_states >= 2 ? n_classes + 1 : n_classes;
    if (dim < min_dim)
        fail(Errc::invalid_spec, "dim must be >= " + std::to_string(min_dim) +
                                     " to host orthogonal class and state axes");
}

std::vector<SimRecord> generate(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::vector<SimRecord> records;
    records.reserve(static_cast<std::size_t>(spec.n_classes) * spec.n_states *
                    spec.samples_per_cell);

    for (int cls = 0; cls < spec.n_classes; ++cls) {
        Embedding center = Embedding::Zero(spec.dim);
        center[cls] = spec.class_separation;
        for (int state = 0; state < spec.n_states; ++state) {
            Embedding offset = Embedding::Zero(spec.dim);
            if (spec.n_states >= 2) {
                const double half = (spec.n_states - 1) / 2.0;
                offset[spec.n_classes] =
                    spec.aux_shift * ((state - half) / std::max(1, spec.n_states - 1)) * 2.0;
            }
            for (int sample = 0; sample < spec.samples_per_cell; ++sample) {
                Embedding point = center + offset;
                for (int d = 0; d < spec.dim; ++d) point[d] += spec.noise_sigma * rng.gaussian();
                records.push_back({std::move(point),
                                   padded_label('c', cls, spec.n_classes),
                                   padded_label('s', state, spec.n_states)});
            }
        }
    }
    return records;
}

BenchReport evaluate(const std::vector<SimRecord>& dataset, double tau,
                     const EvalOptions& options, std::vector<EvalOutcome>* outcomes) {
    if (dataset.empty()) fail(Errc::empty_input, "evaluate needs a non-empty dataset");
    if (!(tau >= 0.0)) fail(Errc::invalid_spec, "tau must be >= 0");
    if (!(options.split_fraction > 0.0 && options.split_fraction < 1.0))
        fail(Errc::invalid_spec, "split_fraction must be in (0, 1)");

    const Eigen::Index dim = dataset.front().embedding.size();
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        require_same_dim(dataset.front().embedding, dataset[i].embedding);
        cells[{dataset[i].class_label, dataset[i].state}].push_back(i);
    }
    for (const auto& [cell, members] : cells)
        if (members.size() < 2)
            fail(Errc::cell_too_small, "cell (" + cell.first + ", " + cell.second +
                                           ") has fewer than 2 samples");

    // Seeded per-cell split, cells visited in sorted order.
    Rng rng(options.seed);
    std::vector<std::size_t> gallery_side;
    std::vector<std::size_t> query_side;
    for (auto& [cell, members] : cells) {
        rng.shuffle(members);
        const auto n = members.size();
        const auto want = static_cast<std::size_t>(
            std::lround(options.split_fraction * static_cast<double>(n)));
        const std::size_t n_gallery = std::clamp<std::size_t>(want, 1, n - 1);
        gallery_side.insert(gallery_side.end(), members.begin(), members.begin() + n_gallery);
        query_side.insert(query_side.end(), members.begin() + n_gallery, members.end());
    }

    GalleryConfig config;
    config.dim = static_cast<int>(dim);
    config.metric = MetricId::euclidean();
    // The protocols thread tau through explicitly; the config value is only a
    // default and must stay valid when tau == 0.
    config.tau = tau > 0.0 ? tau : 1.0;
    config.cap_n = static_cast<int>(dataset.size()) + 1;
    Gallery gallery(config);
    for (std::size_t i : gallery_side)
        gallery.insert(dataset[i].class_label, {{"state", dataset[i].state}},
                       dataset[i].embedding);

    // Unconditioned protocol: per-class overall centroids.
    std::map<std::string, Embedding> class_centroids;
    std::map<std::string, int> class_sizes;
    for (std::size_t i : gallery_side) {
        auto [it, inserted] =
            class_centroids.try_emplace(dataset[i].class_label, Embedding::Zero(dim));
        it->second += dataset[i].embedding;
        ++class_sizes[dataset[i].class_label];
    }
    for (auto& [cls, centroid] : class_centroids)
        centroid /= static_cast<double>(class_sizes[cls]);

    const ClusterModel model = fit_condition_model(gallery, "state", ConditionMode::supervised);

    BenchReport report;
    std::map<std::pair<std::string, std::string>, int> query_counts;
    int correct_unconditioned = 0;
    int correct_conditioned = 0;
    int unknown_unconditioned = 0;
    int unknown_conditioned = 0;

    for (std::size_t i : query_side) {
        const SimRecord& q = dataset[i];
        ++query_counts[{q.class_label, q.state}];

        std::string unconditioned_label = kUnknownLabel;
        if (options.unconditioned_nearest_record) {
            unconditioned_label = gallery.query_open_set_with_tau(q.embedding, tau).label;
        } else {
            double best = std::numeric_limits<double>::infinity();
            std::string best_class;
            for (const auto& [cls, centroid] : class_centroids) {
                const double d = (q.embedding - centroid).norm();
                if (d < best) {
                    best = d;
                    best_class = cls;
                }
            }
            unconditioned_label = best <= tau ? best_class : kUnknownLabel;
        }

        const QueryResult conditioned =
            conditioned_query(gallery, model, q.embedding, {{"state", q.state}}, tau);

        if (unconditioned_label == q.class_label) ++correct_unconditioned;
        if (unconditioned_label == kUnknownLabel) ++unknown_unconditioned;
        if (conditioned.label == q.class_label) ++correct_conditioned;
        if (conditioned.label == kUnknownLabel) ++unknown_conditioned;
        if (outcomes)
            outcomes->push_back({q.class_label, q.state, unconditioned_label, conditioned.label});
    }

    const auto total = static_cast<double>(query_side.size());
    report.acc_unconditioned = correct_unconditioned / total;
    report.acc_conditioned = correct_conditioned / total;
    report.unknown_rate_unconditioned = unknown_unconditioned / total;
    report.unknown_rate_conditioned = unknown_conditioned / total;
    for (const auto& [cell, count] : query_counts)
        report.per_cell.push_back({cell.first, cell.second, count});
    return report;
}

}  // namespace emgal
