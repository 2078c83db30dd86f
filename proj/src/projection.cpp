#include "emgal/projection.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>

#include "emgal/io.hpp"

namespace emgal {
namespace {

// Largest-magnitude entry made positive, lowest index on ties.
void fix_sign(Matrix& components, Eigen::Index row) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < components.cols(); ++i) {
        const double mag = std::abs(components(row, i));
        if (mag > best) {
            best = mag;
            arg = i;
        }
    }
    if (components(row, arg) < 0.0) components.row(row) = -components.row(row);
}

std::string csv_field(const std::string& value) {
    if (value.find_first_of(",\"\n") == std::string::npos) return value;
    std::string quoted = "\"";
    for (char c : value) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    quoted += '"';
    return quoted;
}

}  // namespace

ProjectionModel fit_pca(const std::vector<Embedding>& points, int n_components) {
    if (points.size() < 2) fail(Errc::too_few_points, "PCA needs >= 2 points");
    const Eigen::Index dim = points.front().size();
    for (const auto& p : points) {
        require_same_dim(points.front(), p);
        require_finite(p, "PCA point");
    }
    const Eigen::Index max_components =
        std::min<Eigen::Index>(dim, static_cast<Eigen::Index>(points.size()) - 1);
    if (n_components < 1 || n_components > max_components)
        fail(Errc::too_many_components,
             "n_components must be in [1, " + std::to_string(max_components) + "], got " +
                 std::to_string(n_components));

    const auto n = static_cast<Eigen::Index>(points.size());
    Embedding mean = Embedding::Zero(dim);
    for (const auto& p : points) mean += p;
    mean /= static_cast<double>(n);

    Matrix centered(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) centered.row(i) = (points[i] - mean).transpose();
    const Matrix covariance = centered.transpose() * centered / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Matrix> solver(covariance);
    if (solver.info() != Eigen::Success)
        fail(Errc::non_finite_input, "eigendecomposition failed");

    ProjectionModel model;
    model.mean = std::move(mean);
    model.total_variance = covariance.trace();
    model.components.resize(n_components, dim);
    model.explained_variance.resize(n_components);
    // Eigen returns eigenvalues ascending; take the top ones in reverse.
    for (int c = 0; c < n_components; ++c) {
        const Eigen::Index source = dim - 1 - c;
        model.components.row(c) = solver.eigenvectors().col(source).transpose();
        fix_sign(model.components, c);
        model.explained_variance[c] = std::max(0.0, solver.eigenvalues()[source]);
    }
    return model;
}

Matrix project(const ProjectionModel& model, const std::vector<Embedding>& points) {
    Matrix out(static_cast<Eigen::Index>(points.size()), model.components.rows());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != model.mean.size())
            fail(Errc::dimension_mismatch, "project: point dim " +
                                               std::to_string(points[i].size()) +
                                               " != model dim " +
                                               std::to_string(model.mean.size()));
        out.row(static_cast<Eigen::Index>(i)) =
            (model.components * (points[i] - model.mean)).transpose();
    }
    return out;
}

std::vector<ProjectionRow> export_projection(const Gallery& gallery,
                                             const ProjectionModel& model,
                                             const std::string& color_by) {
    if (model.mean.size() != gallery.config().dim)
        fail(Errc::dimension_mismatch, "projection model dim != gallery dim");
    const bool by_class = color_by == "class";
    if (!by_class) {
        if (gallery.aux_schema()) {
            if (!gallery.aux_schema()->has_variable(color_by))
                fail(Errc::unknown_variable, "variable \"" + color_by + "\" not in schema");
        } else if (!gallery.observed_schema().has_variable(color_by)) {
            fail(Errc::unknown_variable, "variable \"" + color_by + "\" never observed");
        }
    }

    std::vector<ProjectionRow> rows;
    for (const GalleryRecord* record : gallery.records()) {
        ProjectionRow row;
        row.coords = model.components * (record->embedding - model.mean);
        row.class_label = record->class_label;
        if (by_class) {
            row.state = record->class_label;
        } else {
            auto it = record->aux.find(color_by);
            row.state = it == record->aux.end() ? "NA" : it->second;
        }
        row.id = record->id;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_projection_csv(std::ostream& out, const std::vector<ProjectionRow>& rows) {
    const Eigen::Index n_components = rows.empty() ? 0 : rows.front().coords.size();
    for (Eigen::Index c = 0; c < n_components; ++c) out << 'c' << (c + 1) << ',';
    out << "class,state,id\n";
    for (const auto& row : rows) {
        for (Eigen::Index c = 0; c < row.coords.size(); ++c)
            out << io::format_double(row.coords[c]) << ',';
        out << csv_field(row.class_label) << ',' << csv_field(row.state) << ',' << row.id << '\n';
    }
}

}  // namespace emgal
