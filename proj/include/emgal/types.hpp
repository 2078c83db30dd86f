#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace emgal {

/// A point in the latent space. Entries are unitless latent coordinates and
/// must be finite; dimension is the vector length.
using Embedding = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Sentinel class label returned by open-set queries that fall outside the
/// distance threshold.
inline constexpr const char* kUnknownLabel = "UNKNOWN";

/// Error categories raised across the library. The CLI maps these onto
/// process exit codes.
enum class Errc {
    dimension_mismatch,
    invalid_metric_params,
    non_binary_input,
    degenerate_input,
    zero_vector,
    non_finite_input,
    negative_distance,
    invalid_margins,
    unsupported_metric,
    insufficient_classes,
    missing_groups,
    non_finite_loss,
    empty_list,
    unknown_aux_variable,
    unknown_class,
    duplicate_id,
    corrupt_file,
    version_mismatch,
    insufficient_states,
    unknown_variable,
    k_too_large,
    empty_input,
    empty_gallery,
    undeclared_variable,
    too_few_points,
    too_many_components,
    invalid_spec,
    cell_too_small,
    invalid_config,
    store_locked,
    io_error,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require_same_dim(const Embedding& x, const Embedding& y) {
    if (x.size() != y.size())
        fail(Errc::dimension_mismatch, "embedding dims differ: " + std::to_string(x.size()) +
                                           " vs " + std::to_string(y.size()));
}

inline void require_finite(const Embedding& x, const std::string& what) {
    if (!x.allFinite()) fail(Errc::non_finite_input, what + " contains NaN or infinity");
}

}  // namespace emgal
