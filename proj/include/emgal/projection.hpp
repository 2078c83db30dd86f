#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "emgal/gallery.hpp"
#include "emgal/types.hpp"

namespace emgal {

/// Linear projection of the latent space onto its top principal directions,
/// for exporting low-dimensional views to external plotting.
struct ProjectionModel {
    Embedding mean;
    Matrix components;                  // n_components x dim, orthonormal rows
    Eigen::VectorXd explained_variance;  // matching eigenvalues, non-increasing
    double total_variance = 0.0;
};

/// PCA on >= 2 equal-dimension points: mean-centered covariance (divisor
/// n-1), top `n_components` eigenpairs. Component signs are fixed so each
/// row's largest-magnitude entry is positive (lowest index on ties), making
/// results reproducible.
ProjectionModel fit_pca(const std::vector<Embedding>& points, int n_components);

/// Projects points into component coordinates, components * (x - mean).
/// Returns one row per point.
Matrix project(const ProjectionModel& model, const std::vector<Embedding>& points);

struct ProjectionRow {
    Eigen::VectorXd coords;
    std::string class_label;
    std::string state;
    std::int64_t id = 0;
};

/// One row per live gallery record with a color column: the class label when
/// `color_by` is "class", otherwise the record's state of that variable
/// ("NA" when absent).
std::vector<ProjectionRow> export_projection(const Gallery& gallery, const ProjectionModel& model,
                                             const std::string& color_by);

/// CSV with header "c1,...,cn,class,state,id".
void write_projection_csv(std::ostream& out, const std::vector<ProjectionRow>& rows);

}  // namespace emgal
