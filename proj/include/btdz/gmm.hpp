#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "btdz/rng.hpp"

namespace btdz {

/// Full-covariance Gaussian mixture. Covariance eigenvalues are floored at
/// kEigenvalueFloor so components stay nondegenerate even when the data lie on
/// a lower-dimensional manifold.
struct Gmm {
    static constexpr double kEigenvalueFloor = 1e-6;
    static constexpr double kWeightFloor = 1e-8;

    Eigen::VectorXd weights;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covariances;

    int n_components() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

    void validate() const;

    double log_density(const Eigen::VectorXd& x) const;

    /// One raw draw (component by weight, then Gaussian). Not normalized.
    Eigen::VectorXd sample(Rng& rng) const;
};

struct GmmFitResult {
    Gmm model;
    std::vector<double> log_likelihood; // mean per-point log-likelihood, one entry per EM iteration
    int dropped_components = 0;
};

/// Maximum-likelihood EM fit with k-means++ initialization.
///
/// points is N x d, one sample per row. Components whose weight falls below
/// kWeightFloor are dropped (the returned mixture then has fewer than k
/// components). Stops when the mean log-likelihood improves by less than tol
/// or after max_iters iterations; the recorded log-likelihood sequence is
/// non-decreasing up to eigenvalue-floor clamping. An explicit `init` mixture
/// bypasses k-means++ (warm starts, tests of the collapse path).
GmmFitResult fit_gmm(const Eigen::MatrixXd& points, int k, int max_iters, double tol,
                     std::uint64_t seed, const Gmm* init = nullptr);

std::string gmm_to_json(const Gmm& gmm);
Gmm gmm_from_json(const std::string& text);
void save_gmm(const Gmm& gmm, const std::string& path);
Gmm load_gmm(const std::string& path);

} // namespace btdz
