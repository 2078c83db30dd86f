#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "emgal/aux_schema.hpp"
#include "emgal/metrics.hpp"
#include "emgal/types.hpp"

namespace emgal {

struct GalleryConfig {
    int dim = 0;
    MetricId metric = MetricId::euclidean();
    double tau = 1.0;          // open-set distance threshold
    int cap_n = 1000;          // max records per class
    double mad_cutoff = 3.5;   // modified z-score cutoff for outlier pruning
    double adaptive_alpha = 2.0;

    void validate() const;
    bool operator==(const GalleryConfig&) const = default;
};

struct GalleryRecord {
    std::int64_t id = 0;
    std::string class_label;
    AuxStates aux;
    std::int64_t timestamp = 0;  // insertion order, strictly increasing
    Embedding embedding;
};

struct QueryResult {
    std::string label = kUnknownLabel;
    double distance = 0.0;
    std::optional<std::int64_t> nearest_id;
    std::vector<std::pair<std::string, double>> per_class;  // ascending by distance
    bool conditioned = false;
};

/// Labeled-embedding store with open-set threshold queries, recency-capped
/// eviction, MAD outlier pruning, per-class adaptive thresholds and a
/// log-structured persistence format that supports record removal
/// (tombstones, compacted on demand).
///
/// Concurrency contract: any number of concurrent readers OR a single
/// writer; persistence calls require exclusive access.
class Gallery {
public:
    explicit Gallery(GalleryConfig config);

    const GalleryConfig& config() const { return config_; }

    /// Declares a strict aux schema; subsequent inserts reject aux variable
    /// names outside it.
    void set_aux_schema(AuxSchema schema);
    const std::optional<AuxSchema>& aux_schema() const { return schema_; }

    /// Schema derived from the states observed on live records.
    AuxSchema observed_schema() const;

    std::int64_t insert(const std::string& class_label, const AuxStates& aux,
                        const Embedding& embedding);

    /// Insert with a caller-chosen id. Throws Errc::duplicate_id when the id
    /// was ever used (live or tombstoned).
    std::int64_t insert_with_id(std::int64_t id, const std::string& class_label,
                                const AuxStates& aux, const Embedding& embedding);

    /// Tombstones a record. Returns false when the id is not live.
    bool erase(std::int64_t id);

    /// Nearest-record open-set query. Per class the minimum record distance is
    /// computed; the closest class wins (ties: lexicographically smallest
    /// label, then smallest record id) and is returned only when its distance
    /// is within tau (or the class's adaptive threshold when `use_adaptive`).
    /// An empty gallery yields UNKNOWN with an empty per_class list.
    QueryResult query_open_set(const Embedding& query, bool use_adaptive = false) const;

    /// As above with an explicit threshold instead of the configured tau.
    QueryResult query_open_set_with_tau(const Embedding& query, double tau,
                                        bool use_adaptive = false) const;

    /// Deletes the oldest records of a class until at most cap_n (or the
    /// override) remain. Unknown classes are a no-op. Returns the number
    /// evicted.
    std::size_t evict_to_cap(const std::string& class_label,
                             std::optional<int> cap_override = std::nullopt);

    /// Removes outliers of a class by modified z-score over record distances
    /// to the class's component-wise median embedding:
    ///   z_i = 0.6745 * (d_i - median(d)) / MAD,   remove z_i > cutoff.
    /// MAD = 0 falls back to the mean absolute deviation; if that is also 0
    /// nothing is removed. Classes with fewer than 4 members are left alone.
    /// Returns the removed ids.
    std::vector<std::int64_t> prune_mad(const std::string& class_label,
                                        std::optional<double> cutoff_override = std::nullopt);

    /// Per-class threshold mu + alpha*sigma over member distances to the
    /// class centroid (population sigma). Classes with fewer than 2 members
    /// fall back to the global tau.
    double adaptive_tau(const std::string& class_label) const;

    // Views over live records.
    std::size_t size() const { return live_.size(); }
    bool empty() const { return live_.empty(); }
    const GalleryRecord* find(std::int64_t id) const;
    std::vector<const GalleryRecord*> records() const;  // live, ascending id
    std::vector<const GalleryRecord*> records_of(const std::string& class_label) const;
    std::vector<std::string> classes() const;

    std::int64_t next_id() const { return next_id_; }
    std::int64_t next_timestamp() const { return next_ts_; }

    /// State equality: config, counters, declared schema and the live record
    /// set (ids, labels, aux, timestamps, embeddings compared exactly).
    bool state_equal(const Gallery& other) const;

    // Persistence. The on-disk format is a UTF-8 line log: a header object on
    // line 1, then one {"op":"ins",...} or {"op":"del",...} object per line.
    // save() preserves tombstones; compact() rewrites a file with tombstoned
    // records physically removed. load(save(g)) and load(compact(f)) are
    // state-equal to their sources.
    void save(const std::string& path) const;
    static Gallery load(const std::string& path);
    static void compact(const std::string& path);

private:
    struct LogEntry {
        bool is_insert = true;
        GalleryRecord record;   // insert payload
        std::int64_t del_id = 0;
    };

    std::int64_t insert_impl(std::optional<std::int64_t> forced_id, const std::string& class_label,
                             const AuxStates& aux, const Embedding& embedding);
    const GalleryRecord& record_at(std::int64_t id) const;
    std::string serialize(bool live_only) const;

    GalleryConfig config_;
    std::optional<AuxSchema> schema_;
    std::vector<LogEntry> log_;
    std::map<std::int64_t, std::size_t> live_;              // id -> log index
    std::map<std::string, std::set<std::int64_t>> by_class_;  // live ids per class
    std::set<std::int64_t> used_ids_;
    std::int64_t next_id_ = 0;
    std::int64_t next_ts_ = 0;
};

}  // namespace emgal
