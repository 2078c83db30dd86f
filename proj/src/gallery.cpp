#include "emgal/gallery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "emgal/io.hpp"

namespace emgal {
namespace {

double median_of(std::vector<double> values) {
    const std::size_t n = values.size();
    std::sort(values.begin(), values.end());
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

void GalleryConfig::validate() const {
    if (dim < 1) fail(Errc::invalid_config, "gallery dim must be >= 1");
    if (!(tau > 0.0)) fail(Errc::invalid_config, "tau must be positive");
    if (cap_n < 1) fail(Errc::invalid_config, "cap_n must be >= 1");
    if (!(mad_cutoff > 0.0)) fail(Errc::invalid_config, "mad_cutoff must be positive");
    if (!(adaptive_alpha > 0.0)) fail(Errc::invalid_config, "adaptive_alpha must be positive");
    validate_metric(metric, dim);
}

Gallery::Gallery(GalleryConfig config) : config_(std::move(config)) { config_.validate(); }

void Gallery::set_aux_schema(AuxSchema schema) {
    schema.validate();
    schema_ = std::move(schema);
}

AuxSchema Gallery::observed_schema() const {
    AuxSchema schema;
    for (const auto& [id, idx] : live_) {
        for (const auto& [name, state] : log_[idx].record.aux) {
            auto& states = schema.variables[name];
            if (std::find(states.begin(), states.end(), state) == states.end())
                states.push_back(state);
        }
    }
    for (auto& [name, states] : schema.variables) std::sort(states.begin(), states.end());
    return schema;
}

std::int64_t Gallery::insert(const std::string& class_label, const AuxStates& aux,
                             const Embedding& embedding) {
    return insert_impl(std::nullopt, class_label, aux, embedding);
}

std::int64_t Gallery::insert_with_id(std::int64_t id, const std::string& class_label,
                                     const AuxStates& aux, const Embedding& embedding) {
    if (id < 0) fail(Errc::invalid_config, "record id must be non-negative");
    return insert_impl(id, class_label, aux, embedding);
}

std::int64_t Gallery::insert_impl(std::optional<std::int64_t> forced_id,
                                  const std::string& class_label, const AuxStates& aux,
                                  const Embedding& embedding) {
    if (embedding.size() != config_.dim)
        fail(Errc::dimension_mismatch, "insert: embedding dim " + std::to_string(embedding.size()) +
                                           " != gallery dim " + std::to_string(config_.dim));
    require_finite(embedding, "embedding");
    if (schema_) {
        for (const auto& [name, state] : aux) {
            if (!schema_->has_variable(name))
                fail(Errc::unknown_aux_variable, "aux variable \"" + name + "\" not in schema");
        }
    }

    const std::int64_t id = forced_id.value_or(next_id_);
    if (used_ids_.count(id)) fail(Errc::duplicate_id, "record id " + std::to_string(id));

    LogEntry entry;
    entry.is_insert = true;
    entry.record = GalleryRecord{id, class_label, aux, next_ts_++, embedding};
    log_.push_back(std::move(entry));
    live_[id] = log_.size() - 1;
    by_class_[class_label].insert(id);
    used_ids_.insert(id);
    next_id_ = std::max(next_id_, id + 1);
    return id;
}

bool Gallery::erase(std::int64_t id) {
    auto it = live_.find(id);
    if (it == live_.end()) return false;
    const std::string& cls = log_[it->second].record.class_label;
    auto by_class_it = by_class_.find(cls);
    by_class_it->second.erase(id);
    if (by_class_it->second.empty()) by_class_.erase(by_class_it);
    live_.erase(it);

    LogEntry entry;
    entry.is_insert = false;
    entry.del_id = id;
    log_.push_back(std::move(entry));
    return true;
}

const GalleryRecord* Gallery::find(std::int64_t id) const {
    auto it = live_.find(id);
    return it == live_.end() ? nullptr : &log_[it->second].record;
}

const GalleryRecord& Gallery::record_at(std::int64_t id) const { return log_[live_.at(id)].record; }

std::vector<const GalleryRecord*> Gallery::records() const {
    std::vector<const GalleryRecord*> out;
    out.reserve(live_.size());
    for (const auto& [id, idx] : live_) out.push_back(&log_[idx].record);
    return out;
}

std::vector<const GalleryRecord*> Gallery::records_of(const std::string& class_label) const {
    std::vector<const GalleryRecord*> out;
    auto it = by_class_.find(class_label);
    if (it == by_class_.end()) return out;
    out.reserve(it->second.size());
    for (std::int64_t id : it->second) out.push_back(&record_at(id));
    return out;
}

std::vector<std::string> Gallery::classes() const {
    std::vector<std::string> out;
    out.reserve(by_class_.size());
    for (const auto& [cls, ids] : by_class_) out.push_back(cls);
    return out;
}

QueryResult Gallery::query_open_set(const Embedding& query, bool use_adaptive) const {
    return query_open_set_with_tau(query, config_.tau, use_adaptive);
}

QueryResult Gallery::query_open_set_with_tau(const Embedding& query, double tau,
                                             bool use_adaptive) const {
    if (query.size() != config_.dim)
        fail(Errc::dimension_mismatch, "query: embedding dim " + std::to_string(query.size()) +
                                           " != gallery dim " + std::to_string(config_.dim));
    require_finite(query, "query");

    QueryResult result;
    if (live_.empty()) {
        result.distance = std::numeric_limits<double>::infinity();
        return result;
    }

    std::map<std::string, std::int64_t> argmin_id;
    for (const auto& [cls, ids] : by_class_) {
        double best = std::numeric_limits<double>::infinity();
        std::int64_t best_id = -1;
        for (std::int64_t id : ids) {
            const double d = distance(config_.metric, query, record_at(id).embedding);
            if (d < best) {  // ids ascend, so ties keep the smallest id
                best = d;
                best_id = id;
            }
        }
        result.per_class.emplace_back(cls, best);
        argmin_id[cls] = best_id;
    }

    std::sort(result.per_class.begin(), result.per_class.end(),
              [](const auto& a, const auto& b) {
                  return a.second != b.second ? a.second < b.second : a.first < b.first;
              });

    const std::string& predicted = result.per_class.front().first;
    const double d_min = result.per_class.front().second;
    result.nearest_id = argmin_id.at(predicted);

    const double threshold = use_adaptive ? adaptive_tau(predicted) : tau;
    result.distance = d_min;
    result.label = d_min <= threshold ? predicted : kUnknownLabel;
    return result;
}

std::size_t Gallery::evict_to_cap(const std::string& class_label,
                                  std::optional<int> cap_override) {
    const int cap = cap_override.value_or(config_.cap_n);
    if (cap < 1) fail(Errc::invalid_config, "cap must be >= 1");
    auto it = by_class_.find(class_label);
    if (it == by_class_.end()) return 0;
    if (it->second.size() <= static_cast<std::size_t>(cap)) return 0;

    std::vector<std::pair<std::int64_t, std::int64_t>> ts_id;
    ts_id.reserve(it->second.size());
    for (std::int64_t id : it->second) ts_id.emplace_back(record_at(id).timestamp, id);
    std::sort(ts_id.begin(), ts_id.end());

    const std::size_t to_evict = ts_id.size() - static_cast<std::size_t>(cap);
    for (std::size_t i = 0; i < to_evict; ++i) erase(ts_id[i].second);
    return to_evict;
}

std::vector<std::int64_t> Gallery::prune_mad(const std::string& class_label,
                                             std::optional<double> cutoff_override) {
    const double cutoff = cutoff_override.value_or(config_.mad_cutoff);
    if (!(cutoff > 0.0)) fail(Errc::invalid_config, "mad cutoff must be positive");
    auto it = by_class_.find(class_label);
    if (it == by_class_.end()) fail(Errc::unknown_class, "class \"" + class_label + "\"");

    const std::vector<std::int64_t> ids(it->second.begin(), it->second.end());
    if (ids.size() < 4) return {};  // median statistics are meaningless below this

    Embedding center(config_.dim);
    std::vector<double> column(ids.size());
    for (int d = 0; d < config_.dim; ++d) {
        for (std::size_t i = 0; i < ids.size(); ++i) column[i] = record_at(ids[i]).embedding[d];
        center[d] = median_of(column);
    }

    std::vector<double> dists(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        dists[i] = distance(config_.metric, record_at(ids[i]).embedding, center);

    const double med = median_of(dists);
    std::vector<double> deviations(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) deviations[i] = std::abs(dists[i] - med);
    double scale = median_of(deviations);
    if (scale == 0.0) {
        double mean_dev = 0.0;
        for (double dev : deviations) mean_dev += dev;
        scale = mean_dev / static_cast<double>(deviations.size());
        if (scale == 0.0) return {};
    }

    std::vector<std::int64_t> removed;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double z = 0.6745 * (dists[i] - med) / scale;
        if (z > cutoff) removed.push_back(ids[i]);
    }
    for (std::int64_t id : removed) erase(id);
    return removed;
}

double Gallery::adaptive_tau(const std::string& class_label) const {
    auto it = by_class_.find(class_label);
    if (it == by_class_.end()) fail(Errc::unknown_class, "class \"" + class_label + "\"");
    const std::size_t n = it->second.size();
    if (n < 2) return config_.tau;

    Embedding centroid = Embedding::Zero(config_.dim);
    for (std::int64_t id : it->second) centroid += record_at(id).embedding;
    centroid /= static_cast<double>(n);

    double mean = 0.0;
    std::vector<double> dists;
    dists.reserve(n);
    for (std::int64_t id : it->second) {
        dists.push_back(distance(config_.metric, record_at(id).embedding, centroid));
        mean += dists.back();
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double d : dists) var += (d - mean) * (d - mean);
    var /= static_cast<double>(n);
    return mean + config_.adaptive_alpha * std::sqrt(var);
}

bool Gallery::state_equal(const Gallery& other) const {
    if (!(config_ == other.config_)) return false;
    if (schema_ != other.schema_) return false;
    if (next_id_ != other.next_id_ || next_ts_ != other.next_ts_) return false;
    if (live_.size() != other.live_.size()) return false;
    for (const auto& [id, idx] : live_) {
        const GalleryRecord* theirs = other.find(id);
        if (!theirs) return false;
        const GalleryRecord& ours = log_[idx].record;
        if (ours.class_label != theirs->class_label || ours.aux != theirs->aux ||
            ours.timestamp != theirs->timestamp || ours.embedding != theirs->embedding)
            return false;
    }
    return true;
}

std::string Gallery::serialize(bool live_only) const {
    std::ostringstream out;
    out << "{\"format\":\"emgal\",\"version\":1,\"dim\":" << config_.dim
        << ",\"metric\":" << io::metric_to_json(config_.metric)
        << ",\"tau\":" << io::format_double(config_.tau) << ",\"cap_n\":" << config_.cap_n
        << ",\"mad_cutoff\":" << io::format_double(config_.mad_cutoff)
        << ",\"adaptive_alpha\":" << io::format_double(config_.adaptive_alpha)
        << ",\"next_id\":" << next_id_ << ",\"next_ts\":" << next_ts_;
    if (schema_) out << ",\"schema\":" << nlohmann::json(schema_->variables).dump();
    out << "}\n";

    auto write_insert = [&out](const GalleryRecord& r) {
        out << "{\"op\":\"ins\",\"id\":" << r.id << ",\"class\":" << io::quote(r.class_label)
            << ",\"aux\":" << nlohmann::json(r.aux).dump() << ",\"ts\":" << r.timestamp
            << ",\"vec\":" << io::vec_to_json(r.embedding) << "}\n";
    };

    if (live_only) {
        for (const auto& entry : log_)
            if (entry.is_insert && live_.count(entry.record.id)) write_insert(entry.record);
    } else {
        for (const auto& entry : log_) {
            if (entry.is_insert)
                write_insert(entry.record);
            else
                out << "{\"op\":\"del\",\"id\":" << entry.del_id << "}\n";
        }
    }
    return out.str();
}

void Gallery::save(const std::string& path) const { io::atomic_write(path, serialize(false)); }

Gallery Gallery::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io_error, "cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line.empty())
        fail(Errc::corrupt_file, path + ": line 1: missing header");
    const nlohmann::json header = io::parse_line(line, path, 1);

    if (!header.contains("format") || header["format"] != "emgal")
        fail(Errc::corrupt_file, path + ": line 1: not an emgal gallery file");
    if (!header.contains("version") || !header["version"].is_number_integer())
        fail(Errc::corrupt_file, path + ": line 1: missing version");
    if (header["version"].get<int>() != 1)
        fail(Errc::version_mismatch, path + ": unsupported version " + header["version"].dump());
    for (const char* key : {"dim", "metric", "tau", "cap_n"})
        if (!header.contains(key))
            fail(Errc::corrupt_file, path + ": line 1: missing \"" + std::string(key) + "\"");

    GalleryConfig config;
    config.dim = header["dim"].get<int>();
    config.metric = io::metric_from_json(header["metric"], path + ": line 1");
    config.tau = header["tau"].get<double>();
    config.cap_n = header["cap_n"].get<int>();
    if (header.contains("mad_cutoff")) config.mad_cutoff = header["mad_cutoff"].get<double>();
    if (header.contains("adaptive_alpha"))
        config.adaptive_alpha = header["adaptive_alpha"].get<double>();

    Gallery gallery(config);
    if (header.contains("schema")) {
        AuxSchema schema;
        schema.variables =
            header["schema"].get<std::map<std::string, std::vector<std::string>>>();
        gallery.set_aux_schema(std::move(schema));
    }

    int line_no = 1;
    std::int64_t last_ts = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ": line " + std::to_string(line_no);
        const nlohmann::json entry = io::parse_line(line, path, line_no);
        if (!entry.contains("op")) fail(Errc::corrupt_file, where + ": missing \"op\"");

        if (entry["op"] == "ins") {
            for (const char* key : {"id", "class", "ts", "vec"})
                if (!entry.contains(key))
                    fail(Errc::corrupt_file, where + ": missing \"" + std::string(key) + "\"");
            GalleryRecord record;
            record.id = entry["id"].get<std::int64_t>();
            record.class_label = entry["class"].get<std::string>();
            if (entry.contains("aux"))
                record.aux = entry["aux"].get<std::map<std::string, std::string>>();
            record.timestamp = entry["ts"].get<std::int64_t>();
            record.embedding = io::vec_from_json(entry["vec"], where);
            if (record.embedding.size() != config.dim)
                fail(Errc::dimension_mismatch,
                     where + ": vector dim " + std::to_string(record.embedding.size()) +
                         " != header dim " + std::to_string(config.dim));
            if (gallery.used_ids_.count(record.id))
                fail(Errc::corrupt_file, where + ": duplicate id " + std::to_string(record.id));
            if (record.timestamp <= last_ts)
                fail(Errc::corrupt_file, where + ": timestamps not increasing");
            last_ts = record.timestamp;

            LogEntry log_entry;
            log_entry.is_insert = true;
            log_entry.record = std::move(record);
            gallery.log_.push_back(std::move(log_entry));
            const GalleryRecord& stored = gallery.log_.back().record;
            gallery.live_[stored.id] = gallery.log_.size() - 1;
            gallery.by_class_[stored.class_label].insert(stored.id);
            gallery.used_ids_.insert(stored.id);
            gallery.next_id_ = std::max(gallery.next_id_, stored.id + 1);
            gallery.next_ts_ = std::max(gallery.next_ts_, stored.timestamp + 1);
        } else if (entry["op"] == "del") {
            if (!entry.contains("id")) fail(Errc::corrupt_file, where + ": missing \"id\"");
            const std::int64_t id = entry["id"].get<std::int64_t>();
            auto live_it = gallery.live_.find(id);
            if (live_it == gallery.live_.end())
                fail(Errc::corrupt_file, where + ": delete of unknown id " + std::to_string(id));
            const std::string& cls = gallery.log_[live_it->second].record.class_label;
            auto by_class_it = gallery.by_class_.find(cls);
            by_class_it->second.erase(id);
            if (by_class_it->second.empty()) gallery.by_class_.erase(by_class_it);
            gallery.live_.erase(live_it);
            LogEntry log_entry;
            log_entry.is_insert = false;
            log_entry.del_id = id;
            gallery.log_.push_back(std::move(log_entry));
        } else {
            fail(Errc::corrupt_file, where + ": unknown op " + entry["op"].dump());
        }
    }

    if (header.contains("next_id"))
        gallery.next_id_ = std::max(gallery.next_id_, header["next_id"].get<std::int64_t>());
    if (header.contains("next_ts"))
        gallery.next_ts_ = std::max(gallery.next_ts_, header["next_ts"].get<std::int64_t>());
    return gallery;
}

void Gallery::compact(const std::string& path) {
    const Gallery gallery = load(path);
    io::atomic_write(path, gallery.serialize(true));
}

}  // namespace emgal
