#pragma once

#include <string>

#include <json.hpp>

#include "emgal/metrics.hpp"
#include "emgal/types.hpp"

namespace emgal::io {

/// Decimal numeral for a double carrying 17 significant digits, enough to
/// round-trip binary64 exactly through strtod.
std::string format_double(double value);

/// JSON string literal (quoted, escaped).
std::string quote(const std::string& s);

/// JSON array of format_double numerals.
std::string vec_to_json(const Embedding& v);

Embedding vec_from_json(const nlohmann::json& arr, const std::string& where);

/// Metric as a JSON value: a bare name string for parameterless kinds, an
/// object {"kind":...,"p":...} / {"kind":...,"inv_cov":[[...]]} otherwise.
std::string metric_to_json(const MetricId& metric);
MetricId metric_from_json(const nlohmann::json& value, const std::string& where);

/// Parses one line as a JSON object; parse failures become Errc::corrupt_file
/// naming the file and line number.
nlohmann::json parse_line(const std::string& line, const std::string& path, int line_no);

std::string read_file(const std::string& path);

/// Writes contents to a sibling temp file and renames it over `path`.
void atomic_write(const std::string& path, const std::string& contents);

/// Exclusive advisory lock on `<store>.lock`. Construction fails fast with
/// Errc::store_locked when another process holds it.
class StoreLock {
public:
    explicit StoreLock(const std::string& store_path);
    ~StoreLock();
    StoreLock(const StoreLock&) = delete;
    StoreLock& operator=(const StoreLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace emgal::io
