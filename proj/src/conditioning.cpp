#include "emgal/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "emgal/io.hpp"
#include "emgal/random.hpp"

namespace emgal {
namespace {

void check_variable_known(const Gallery& gallery, const std::string& variable) {
    if (gallery.aux_schema()) {
        if (!gallery.aux_schema()->has_variable(variable))
            fail(Errc::unknown_variable, "variable \"" + variable + "\" not in schema");
        return;
    }
    if (!gallery.observed_schema().has_variable(variable))
        fail(Errc::unknown_variable, "variable \"" + variable + "\" never observed");
}

// class -> state -> embeddings of live records carrying the variable
using Grouped = std::map<std::string, std::map<std::string, std::vector<const Embedding*>>>;

Grouped group_by_state(const Gallery& gallery, const std::string& variable) {
    Grouped grouped;
    for (const GalleryRecord* record : gallery.records()) {
        auto it = record->aux.find(variable);
        if (it == record->aux.end()) continue;
        grouped[record->class_label][it->second].push_back(&record->embedding);
    }
    return grouped;
}

Embedding mean_of(const std::vector<const Embedding*>& embeddings, Eigen::Index dim) {
    Embedding mean = Embedding::Zero(dim);
    for (const Embedding* e : embeddings) mean += *e;
    return mean / static_cast<double>(embeddings.size());
}

}  // namespace

SaliencyReport saliency(const Gallery& gallery, const std::string& variable) {
    check_variable_known(gallery, variable);

    SaliencyReport report;
    report.variable = variable;

    const Grouped grouped = group_by_state(gallery, variable);
    double ratio_sum = 0.0;
    std::size_t eligible = 0;
    for (const auto& [cls, states] : grouped) {
        if (states.size() < 2) continue;

        std::size_t n_class = 0;
        for (const auto& [state, members] : states) n_class += members.size();

        Embedding class_mean = Embedding::Zero(gallery.config().dim);
        for (const auto& [state, members] : states)
            for (const Embedding* e : members) class_mean += *e;
        class_mean /= static_cast<double>(n_class);

        double between = 0.0;
        double within = 0.0;
        for (const auto& [state, members] : states) {
            const Embedding state_mean = mean_of(members, gallery.config().dim);
            between += (static_cast<double>(members.size()) / static_cast<double>(n_class)) *
                       (state_mean - class_mean).squaredNorm();
            for (const Embedding* e : members) within += (*e - state_mean).squaredNorm();
        }
        within /= static_cast<double>(n_class);

        report.per_class[cls] = {between, within};
        ratio_sum += between == 0.0 ? 0.0 : between / (within + 1e-12);
        ++eligible;
    }

    if (eligible == 0)
        fail(Errc::insufficient_states,
             "no class observes >= 2 states of variable \"" + variable + "\"");
    report.score = ratio_sum / static_cast<double>(eligible);
    return report;
}

namespace {

double lloyd_inertia(const std::vector<Embedding>& points, const Matrix& centroids,
                     const std::vector<int>& assignments) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        inertia += (points[i] - centroids.row(assignments[i]).transpose()).squaredNorm();
    return inertia;
}

Matrix kmeanspp_init(const std::vector<Embedding>& points, int k, Rng& rng) {
    const auto n = points.size();
    const Eigen::Index dim = points.front().size();
    Matrix centroids(k, dim);
    centroids.row(0) = points[rng.below(n)].transpose();

    std::vector<double> min_dist2(n);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < c; ++j)
                best = std::min(best, (points[i] - centroids.row(j).transpose()).squaredNorm());
            min_dist2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform01() * total;
            double cumulative = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                cumulative += min_dist2[i];
                if (cumulative > r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);  // all remaining distances zero (duplicate points)
        }
        centroids.row(c) = points[pick].transpose();
    }
    return centroids;
}

}  // namespace

KMeansResult kmeans(const std::vector<Embedding>& points, int k, std::uint64_t seed, int max_iter,
                    double tol, int n_init) {
    if (points.empty()) fail(Errc::empty_input, "kmeans needs >= 1 point");
    if (k < 1) fail(Errc::invalid_config, "k must be >= 1");
    if (static_cast<std::size_t>(k) > points.size())
        fail(Errc::k_too_large, "k = " + std::to_string(k) + " exceeds " +
                                    std::to_string(points.size()) + " points");
    const Eigen::Index dim = points.front().size();
    for (const auto& p : points) {
        require_same_dim(points.front(), p);
        require_finite(p, "kmeans point");
    }

    const auto n = points.size();
    Rng rng(seed);
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();

    for (int restart = 0; restart < n_init; ++restart) {
        Matrix centroids = kmeanspp_init(points, k, rng);
        std::vector<int> assignments(n, 0);
        std::vector<double> history;

        for (int iter = 0; iter < max_iter; ++iter) {
            // Assignment step; ties go to the lowest centroid index.
            for (std::size_t i = 0; i < n; ++i) {
                double bestd = std::numeric_limits<double>::infinity();
                int arg = 0;
                for (int c = 0; c < k; ++c) {
                    const double d = (points[i] - centroids.row(c).transpose()).squaredNorm();
                    if (d < bestd) {
                        bestd = d;
                        arg = c;
                    }
                }
                assignments[i] = arg;
            }
            history.push_back(lloyd_inertia(points, centroids, assignments));

            // Update step.
            Matrix updated = Matrix::Zero(k, dim);
            std::vector<std::size_t> sizes(k, 0);
            for (std::size_t i = 0; i < n; ++i) {
                updated.row(assignments[i]) += points[i].transpose();
                ++sizes[assignments[i]];
            }
            std::vector<int> empty_clusters;
            for (int c = 0; c < k; ++c) {
                if (sizes[c] == 0) {
                    empty_clusters.push_back(c);
                    updated.row(c) = centroids.row(c);
                } else {
                    updated.row(c) /= static_cast<double>(sizes[c]);
                }
            }
            // Re-seed empty clusters on the points farthest from their
            // centroids, one point per cluster, lowest index on ties.
            std::vector<bool> taken(n, false);
            for (int c : empty_clusters) {
                double far = -1.0;
                std::size_t pick = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (taken[i]) continue;
                    const double d =
                        (points[i] - updated.row(assignments[i]).transpose()).squaredNorm();
                    if (d > far) {
                        far = d;
                        pick = i;
                    }
                }
                taken[pick] = true;
                updated.row(c) = points[pick].transpose();
            }

            const double shift = (updated - centroids).rowwise().norm().maxCoeff();
            centroids = std::move(updated);
            if (shift <= tol) break;
        }

        // Final assignment against the settled centroids.
        for (std::size_t i = 0; i < n; ++i) {
            double bestd = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (int c = 0; c < k; ++c) {
                const double d = (points[i] - centroids.row(c).transpose()).squaredNorm();
                if (d < bestd) {
                    bestd = d;
                    arg = c;
                }
            }
            assignments[i] = arg;
        }
        const double inertia = lloyd_inertia(points, centroids, assignments);
        history.push_back(inertia);

        if (inertia < best.inertia) {
            best.centroids = std::move(centroids);
            best.assignments = std::move(assignments);
            best.inertia = inertia;
            best.inertia_history = std::move(history);
        }
    }
    return best;
}

const char* condition_mode_name(ConditionMode mode) noexcept {
    return mode == ConditionMode::supervised ? "supervised" : "kmeans";
}

std::optional<ConditionMode> condition_mode_from_name(std::string_view name) noexcept {
    if (name == "supervised") return ConditionMode::supervised;
    if (name == "kmeans") return ConditionMode::kmeans;
    return std::nullopt;
}

ClusterModel fit_condition_model(const Gallery& gallery, const std::string& variable,
                                 ConditionMode mode, std::uint64_t seed) {
    if (gallery.empty()) fail(Errc::empty_gallery, "cannot fit a condition model");
    check_variable_known(gallery, variable);

    ClusterModel model;
    model.variable = variable;
    model.mode = mode;
    model.dim = gallery.config().dim;

    const Grouped grouped = group_by_state(gallery, variable);
    std::uint64_t class_index = 0;
    for (const auto& [cls, states] : grouped) {
        if (mode == ConditionMode::supervised) {
            for (const auto& [state, members] : states) {
                model.centroids[{cls, state}] = mean_of(members, model.dim);
                model.counts[{cls, state}] = static_cast<int>(members.size());
            }
        } else {
            std::vector<Embedding> points;
            std::vector<std::string> point_states;
            for (const auto& [state, members] : states) {
                for (const Embedding* e : members) {
                    points.push_back(*e);
                    point_states.push_back(state);
                }
            }
            const int k = static_cast<int>(states.size());
            const KMeansResult clusters = kmeans(points, k, seed + class_index);

            for (int c = 0; c < k; ++c) {
                std::map<std::string, int> votes;
                int member_count = 0;
                for (std::size_t i = 0; i < points.size(); ++i) {
                    if (clusters.assignments[i] == c) {
                        ++votes[point_states[i]];
                        ++member_count;
                    }
                }
                if (member_count == 0) continue;
                // Majority state; ties resolve to the lexicographically
                // smallest state (map order).
                std::string label;
                int best_votes = -1;
                for (const auto& [state, count] : votes) {
                    if (count > best_votes) {
                        best_votes = count;
                        label = state;
                    }
                }
                const Embedding centroid = clusters.centroids.row(c).transpose();
                auto key = std::make_pair(cls, label);
                auto existing = model.centroids.find(key);
                if (existing == model.centroids.end()) {
                    model.centroids[key] = centroid;
                    model.counts[key] = member_count;
                } else {
                    // Two clusters voted for the same state: merge them,
                    // weighting by member count.
                    const int previous = model.counts[key];
                    existing->second = (existing->second * previous + centroid * member_count) /
                                       static_cast<double>(previous + member_count);
                    model.counts[key] = previous + member_count;
                }
            }
        }
        ++class_index;
    }
    return model;
}

QueryResult conditioned_query(const Gallery& gallery, const ClusterModel& model,
                              const Embedding& query, const AuxStates& declared_states,
                              double tau) {
    auto declared = declared_states.find(model.variable);
    if (declared == declared_states.end())
        fail(Errc::undeclared_variable,
             "query declares no state for variable \"" + model.variable + "\"");
    if (query.size() != model.dim)
        fail(Errc::dimension_mismatch, "query dim " + std::to_string(query.size()) +
                                           " != model dim " + std::to_string(model.dim));

    QueryResult result;
    result.conditioned = true;
    for (const auto& [key, centroid] : model.centroids) {
        if (key.second != declared->second) continue;
        result.per_class.emplace_back(key.first,
                                      distance(gallery.config().metric, query, centroid));
    }
    if (result.per_class.empty()) {
        QueryResult fallback = gallery.query_open_set_with_tau(query, tau);
        fallback.conditioned = false;
        return fallback;
    }

    std::sort(result.per_class.begin(), result.per_class.end(),
              [](const auto& a, const auto& b) {
                  return a.second != b.second ? a.second < b.second : a.first < b.first;
              });
    result.distance = result.per_class.front().second;
    result.label = result.distance <= tau ? result.per_class.front().first : kUnknownLabel;
    return result;
}

void ClusterModel::save(const std::string& path) const {
    std::ostringstream out;
    out << "{\"format\":\"emgal-cmodel\",\"version\":1,\"dim\":" << dim
        << ",\"variable\":" << io::quote(variable) << ",\"mode\":\"" << condition_mode_name(mode)
        << "\"}\n";
    for (const auto& [key, centroid] : centroids) {
        out << "{\"class\":" << io::quote(key.first) << ",\"state\":" << io::quote(key.second)
            << ",\"count\":" << counts.at(key) << ",\"vec\":" << io::vec_to_json(centroid)
            << "}\n";
    }
    io::atomic_write(path, out.str());
}

ClusterModel ClusterModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io_error, "cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty())
        fail(Errc::corrupt_file, path + ": line 1: missing header");
    const nlohmann::json header = io::parse_line(line, path, 1);
    if (!header.contains("format") || header["format"] != "emgal-cmodel")
        fail(Errc::corrupt_file, path + ": line 1: not an emgal cluster-model file");
    if (!header.contains("version") || header["version"].get<int>() != 1)
        fail(Errc::version_mismatch, path + ": unsupported version");
    for (const char* key : {"dim", "variable", "mode"})
        if (!header.contains(key))
            fail(Errc::corrupt_file, path + ": line 1: missing \"" + std::string(key) + "\"");

    ClusterModel model;
    model.dim = header["dim"].get<int>();
    model.variable = header["variable"].get<std::string>();
    const auto mode = condition_mode_from_name(header["mode"].get<std::string>());
    if (!mode) fail(Errc::corrupt_file, path + ": line 1: unknown mode");
    model.mode = *mode;
    if (model.dim < 1) fail(Errc::corrupt_file, path + ": line 1: invalid dim");

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ": line " + std::to_string(line_no);
        const nlohmann::json entry = io::parse_line(line, path, line_no);
        for (const char* key : {"class", "state", "count", "vec"})
            if (!entry.contains(key))
                fail(Errc::corrupt_file, where + ": missing \"" + std::string(key) + "\"");
        const auto key = std::make_pair(entry["class"].get<std::string>(),
                                        entry["state"].get<std::string>());
        if (model.centroids.count(key))
            fail(Errc::corrupt_file, where + ": duplicate (class, state) centroid");
        const Embedding centroid = io::vec_from_json(entry["vec"], where);
        if (centroid.size() != model.dim)
            fail(Errc::dimension_mismatch, where + ": centroid dim != header dim");
        const int count = entry["count"].get<int>();
        if (count < 1) fail(Errc::corrupt_file, where + ": count must be >= 1");
        model.centroids[key] = centroid;
        model.counts[key] = count;
    }
    return model;
}

}  // namespace emgal
