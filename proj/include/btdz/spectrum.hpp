#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "btdz/dataset.hpp"
#include "btdz/features.hpp"
#include "btdz/mdp.hpp"
#include "btdz/tasks.hpp"

namespace btdz {

/// Eigenstructure of an empirical feature-occupancy covariance. The
/// normalized trace (trace / d) is the signal strength a uniformly sampled
/// task sees: the expected inter-policy return variance.
struct SpectrumReport {
    int dim = 0;
    double trace = 0.0;
    double normalized_trace = 0.0;
    Eigen::VectorXd eigenvalues; // descending

    void validate() const; // PSD up to -1e-9, trace consistent with the eigenvalue sum
};

/// Population covariance spectrum of a sample given as rows.
SpectrumReport covariance_spectrum(const Eigen::MatrixXd& rows);

/// Population variance over the rows of (rows . z): the inter-policy return
/// variance for one fixed task.
double return_variance(const Eigen::MatrixXd& rows, const Eigen::VectorXd& z);

/// Exact discounted state occupancies of n_policies uniformly random
/// deterministic policies, one row per policy.
Eigen::MatrixXd sample_state_occupancies(const TabularMdp& mdp, int n_policies,
                                         std::uint64_t seed);

/// Discounted indicator sums of sampled subtrajectories, one row per slice.
/// Row r has entry sum_t gamma^t [s_t = s] for slice r.
Eigen::MatrixXd subtrajectory_visit_vectors(const Dataset& dataset, double gamma, int n_sub,
                                            int len_min, int len_max, std::uint64_t seed);

/// Spectrum of the feature-occupancy covariance over sampled random policies.
SpectrumReport behavioral_covariance_policies(const TabularMdp& mdp, const FeatureMap& features,
                                              int n_policies, std::uint64_t seed);

/// Same, over the full deterministic policy population. Only feasible for
/// very small MDPs; the exhaustive oracle for tests.
SpectrumReport behavioral_covariance_policies_exhaustive(const TabularMdp& mdp,
                                                         const FeatureMap& features);

/// Spectrum of the covariance of unnormalized subtrajectory feature
/// occupancies (the empirical stand-in for the behavioral space).
SpectrumReport behavioral_covariance_subtraj(const Dataset& dataset, const FeatureMap& features,
                                             double gamma, int n_sub, int len_min, int len_max,
                                             std::uint64_t seed);

/// trace / d: what the spectrum predicts for the uniform-task return variance.
double expected_uniform_task_variance(const SpectrumReport& report);

struct TaskVarianceEstimate {
    double estimate = 0.0;
    double standard_error = 0.0;
};

/// Monte Carlo average over tasks of the inter-policy return variance, with
/// the standard error of that average. Policies are shared across tasks.
TaskVarianceEstimate monte_carlo_task_variance(const Eigen::MatrixXd& feature_occupancies,
                                               const TaskVectorSet& tasks);

using TaskSamplerFn = std::function<TaskVectorSet(int n, std::uint64_t seed)>;

TaskVarianceEstimate monte_carlo_task_variance(const TabularMdp& mdp, const FeatureMap& features,
                                               const TaskSamplerFn& sampler, int n_z,
                                               int n_policies, std::uint64_t seed);

enum class DilutionEstimator { policies, subtrajectories };

struct DilutionOptions {
    DilutionEstimator estimator = DilutionEstimator::policies;
    bool whiten = true;
    std::uint64_t feature_seed = 0;
    int n_policies = 512;
    int n_sub = 20000;
    int len_min = 5;
    int len_max = 100;
};

/// Normalized-trace curve across feature dimensions (dims must be ascending).
/// `dataset` is required for the subtrajectory estimator and for lra_p.
std::vector<SpectrumReport> dilution_curve(const TabularMdp& mdp, const Dataset* dataset,
                                           FeatureFamily family, const std::vector<int>& dims,
                                           const DilutionOptions& options, std::uint64_t seed);

} // namespace btdz
