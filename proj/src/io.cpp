#include "emgal/io.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace emgal::io {

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

std::string quote(const std::string& s) { return nlohmann::json(s).dump(); }

std::string vec_to_json(const Embedding& v) {
    std::string out = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0) out += ',';
        out += format_double(v[i]);
    }
    out += ']';
    return out;
}

Embedding vec_from_json(const nlohmann::json& arr, const std::string& where) {
    if (!arr.is_array()) fail(Errc::corrupt_file, where + ": \"vec\" must be an array");
    Embedding v(static_cast<Eigen::Index>(arr.size()));
    Eigen::Index i = 0;
    for (const auto& item : arr) {
        if (!item.is_number()) fail(Errc::corrupt_file, where + ": vector entry is not a number");
        v[i++] = item.get<double>();
    }
    if (!v.allFinite()) fail(Errc::corrupt_file, where + ": vector entry is not finite");
    return v;
}

std::string metric_to_json(const MetricId& metric) {
    switch (metric.kind) {
        case MetricKind::minkowski:
            return std::string("{\"kind\":\"minkowski\",\"p\":") + format_double(metric.minkowski_p) +
                   "}";
        case MetricKind::mahalanobis: {
            std::string out = "{\"kind\":\"mahalanobis\",\"inv_cov\":[";
            for (Eigen::Index r = 0; r < metric.inverse_covariance.rows(); ++r) {
                if (r > 0) out += ',';
                out += vec_to_json(metric.inverse_covariance.row(r).transpose());
            }
            out += "]}";
            return out;
        }
        default:
            return quote(metric_kind_name(metric.kind));
    }
}

MetricId metric_from_json(const nlohmann::json& value, const std::string& where) {
    if (value.is_string()) {
        const auto kind = metric_kind_from_name(value.get<std::string>());
        if (!kind || *kind == MetricKind::minkowski || *kind == MetricKind::mahalanobis)
            fail(Errc::corrupt_file, where + ": unknown or under-specified metric \"" +
                                         value.get<std::string>() + "\"");
        MetricId m;
        m.kind = *kind;
        return m;
    }
    if (!value.is_object() || !value.contains("kind") || !value["kind"].is_string())
        fail(Errc::corrupt_file, where + ": metric must be a name or {\"kind\":...} object");
    const auto kind = metric_kind_from_name(value["kind"].get<std::string>());
    if (!kind) fail(Errc::corrupt_file, where + ": unknown metric kind");
    MetricId m;
    m.kind = *kind;
    if (*kind == MetricKind::minkowski) {
        if (!value.contains("p") || !value["p"].is_number())
            fail(Errc::corrupt_file, where + ": minkowski metric requires numeric \"p\"");
        m.minkowski_p = value["p"].get<double>();
    }
    if (*kind == MetricKind::mahalanobis) {
        if (!value.contains("inv_cov") || !value["inv_cov"].is_array())
            fail(Errc::corrupt_file, where + ": mahalanobis metric requires \"inv_cov\" rows");
        const auto& rows = value["inv_cov"];
        const auto n = static_cast<Eigen::Index>(rows.size());
        m.inverse_covariance.resize(n, n);
        Eigen::Index r = 0;
        for (const auto& row : rows) {
            const Embedding parsed = vec_from_json(row, where);
            if (parsed.size() != n) fail(Errc::corrupt_file, where + ": inv_cov is not square");
            m.inverse_covariance.row(r++) = parsed.transpose();
        }
    }
    return m;
}

nlohmann::json parse_line(const std::string& line, const std::string& path, int line_no) {
    nlohmann::json parsed = nlohmann::json::parse(line, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object())
        fail(Errc::corrupt_file,
             path + ": line " + std::to_string(line_no) + " is not a valid object");
    return parsed;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io_error, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void atomic_write(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(Errc::io_error, "cannot write " + tmp);
        out << contents;
        out.flush();
        if (!out) {
            std::remove(tmp.c_str());
            fail(Errc::io_error, "short write to " + tmp);
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        fail(Errc::io_error, "cannot rename " + tmp + " to " + path);
    }
}

StoreLock::StoreLock(const std::string& store_path) {
    const std::string lock_path = store_path + ".lock";
    fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) fail(Errc::io_error, "cannot open lock file " + lock_path);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        fail(Errc::store_locked, "store is locked by another process: " + store_path);
    }
}

StoreLock::~StoreLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

}  // namespace emgal::io
