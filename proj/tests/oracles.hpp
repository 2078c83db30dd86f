// Test-only reference implementations, independent of the library's own code
// paths: brute-force enumerations, finite differences and naive two-pass
// statistics used to freeze expected values.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>

namespace oracles {

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int dim, double lo = -2.0,
                                     double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = dist(rng);
    return v;
}

inline Eigen::VectorXd random_binary_vector(std::mt19937_64& rng, int dim) {
    std::bernoulli_distribution coin(0.5);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = coin(rng) ? 1.0 : 0.0;
    return v;
}

// Symmetric positive definite matrix A^T A + eps I.
inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int dim, double eps = 0.1) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Eigen::MatrixXd a(dim, dim);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c) a(r, c) = dist(rng);
    return a.transpose() * a + eps * Eigen::MatrixXd::Identity(dim, dim);
}

// Central finite difference gradient of a scalar function of one vector.
inline Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                         const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::VectorXd grad(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd hi = x;
        Eigen::VectorXd lo = x;
        hi[i] += h;
        lo[i] -= h;
        grad[i] = (f(hi) - f(lo)) / (2.0 * h);
    }
    return grad;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

// Every valid (anchor, positive, negative) index triple by definition.
inline std::set<std::tuple<int, int, int>> enumerate_triplets(
    const std::vector<std::string>& labels) {
    std::set<std::tuple<int, int, int>> out;
    const int n = static_cast<int>(labels.size());
    for (int a = 0; a < n; ++a)
        for (int p = 0; p < n; ++p)
            for (int neg = 0; neg < n; ++neg)
                if (a != p && labels[a] == labels[p] && labels[neg] != labels[a])
                    out.insert({a, p, neg});
    return out;
}

// Exhaustive optimal 2-partition by within-cluster sum of squares. Returns
// the membership mask of the cluster containing point 0.
inline std::vector<bool> best_two_partition(const std::vector<Eigen::VectorXd>& points) {
    const std::size_t n = points.size();
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<bool> best_mask(n, false);
    for (std::uint64_t mask = 1; mask + 1 < (1ull << n); ++mask) {
        if (!(mask & 1)) continue;  // canonical: point 0 in cluster A
        Eigen::VectorXd mean_a = Eigen::VectorXd::Zero(points[0].size());
        Eigen::VectorXd mean_b = Eigen::VectorXd::Zero(points[0].size());
        int na = 0;
        int nb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1ull << i)) {
                mean_a += points[i];
                ++na;
            } else {
                mean_b += points[i];
                ++nb;
            }
        }
        mean_a /= na;
        mean_b /= nb;
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            cost += (points[i] - ((mask & (1ull << i)) ? mean_a : mean_b)).squaredNorm();
        if (cost < best_cost) {
            best_cost = cost;
            for (std::size_t i = 0; i < n; ++i) best_mask[i] = (mask & (1ull << i)) != 0;
        }
    }
    return best_mask;
}

}  // namespace oracles
