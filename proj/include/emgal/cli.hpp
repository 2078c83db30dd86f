#pragma once

#include <string>
#include <vector>

namespace emgal::cli {

/// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 dimension
/// mismatch, 4 internal numeric failure.
int run(int argc, const char* const argv[]);

/// Convenience overload for in-process invocation; `args` excludes argv[0].
int run(const std::vector<std::string>& args);

}  // namespace emgal::cli
