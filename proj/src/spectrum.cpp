#include "btdz/spectrum.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "btdz/rng.hpp"

namespace btdz {

void SpectrumReport::validate() const {
    if (eigenvalues.size() != dim) throw std::invalid_argument("SpectrumReport: bad eigenvalue count");
    if (eigenvalues.size() > 0 && eigenvalues.minCoeff() < -1e-9)
        throw std::invalid_argument("SpectrumReport: covariance is not PSD");
    if (std::abs(trace - eigenvalues.sum()) > 1e-6)
        throw std::invalid_argument("SpectrumReport: trace disagrees with eigenvalue sum");
}

SpectrumReport covariance_spectrum(const Eigen::MatrixXd& rows) {
    const int n = static_cast<int>(rows.rows());
    const int d = static_cast<int>(rows.cols());
    if (n < 1) throw std::invalid_argument("covariance_spectrum: no rows");
    const Eigen::RowVectorXd mean = rows.colwise().mean();
    const Eigen::MatrixXd centered = rows.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    SpectrumReport report;
    report.dim = d;
    report.eigenvalues = es.eigenvalues().reverse();
    report.trace = cov.trace();
    report.normalized_trace = report.trace / d;
    return report;
}

double return_variance(const Eigen::MatrixXd& rows, const Eigen::VectorXd& z) {
    const Eigen::VectorXd returns = rows * z;
    const double mean = returns.mean();
    return (returns.array() - mean).square().sum() / static_cast<double>(returns.size());
}

Eigen::MatrixXd sample_state_occupancies(const TabularMdp& mdp, int n_policies,
                                         std::uint64_t seed) {
    if (n_policies < 1)
        throw std::invalid_argument("sample_state_occupancies: n_policies must be >= 1");
    Eigen::MatrixXd rows(n_policies, mdp.n_states);
    for (int i = 0; i < n_policies; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        DeterministicPolicy policy;
        policy.action_of.resize(mdp.n_states);
        for (int s = 0; s < mdp.n_states; ++s) policy.action_of[s] = rng.uniform_int(mdp.n_actions);
        rows.row(i) = discounted_occupancy(mdp, policy).transpose();
    }
    return rows;
}

Eigen::MatrixXd subtrajectory_visit_vectors(const Dataset& dataset, double gamma, int n_sub,
                                            int len_min, int len_max, std::uint64_t seed) {
    const auto subs = sample_subtrajectories(dataset, n_sub, len_min, len_max, seed);
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(n_sub, dataset.n_states);
    for (int i = 0; i < n_sub; ++i) {
        double scale = 1.0;
        for (int s : subs[i].states) {
            rows(i, s) += scale;
            scale *= gamma;
        }
    }
    return rows;
}

SpectrumReport behavioral_covariance_policies(const TabularMdp& mdp, const FeatureMap& features,
                                              int n_policies, std::uint64_t seed) {
    if (n_policies < 2)
        throw std::invalid_argument("behavioral_covariance_policies: need at least 2 policies");
    const Eigen::MatrixXd occ = sample_state_occupancies(mdp, n_policies, seed);
    return covariance_spectrum(occ * features.phi);
}

SpectrumReport behavioral_covariance_policies_exhaustive(const TabularMdp& mdp,
                                                         const FeatureMap& features) {
    double count = std::pow(static_cast<double>(mdp.n_actions), mdp.n_states);
    if (count > 1e6)
        throw std::invalid_argument(
            "behavioral_covariance_policies_exhaustive: policy population too large");
    const int total = static_cast<int>(count);
    Eigen::MatrixXd rows(total, features.dim());
    DeterministicPolicy policy;
    policy.action_of.assign(mdp.n_states, 0);
    for (int idx = 0; idx < total; ++idx) {
        int rem = idx;
        for (int s = 0; s < mdp.n_states; ++s) {
            policy.action_of[s] = rem % mdp.n_actions;
            rem /= mdp.n_actions;
        }
        rows.row(idx) = feature_occupancy(mdp, policy, features).psi.transpose();
    }
    return covariance_spectrum(rows);
}

SpectrumReport behavioral_covariance_subtraj(const Dataset& dataset, const FeatureMap& features,
                                             double gamma, int n_sub, int len_min, int len_max,
                                             std::uint64_t seed) {
    const Eigen::MatrixXd visits =
        subtrajectory_visit_vectors(dataset, gamma, n_sub, len_min, len_max, seed);
    return covariance_spectrum(visits * features.phi);
}

double expected_uniform_task_variance(const SpectrumReport& report) {
    return report.trace / report.dim;
}

TaskVarianceEstimate monte_carlo_task_variance(const Eigen::MatrixXd& feature_occupancies,
                                               const TaskVectorSet& tasks) {
    const int n_z = tasks.size();
    if (n_z < 2) throw std::invalid_argument("monte_carlo_task_variance: need at least 2 tasks");
    Eigen::VectorXd variances(n_z);
    for (int i = 0; i < n_z; ++i)
        variances[i] = return_variance(feature_occupancies, tasks.vectors.row(i).transpose());
    TaskVarianceEstimate out;
    out.estimate = variances.mean();
    const double sample_var =
        (variances.array() - out.estimate).square().sum() / static_cast<double>(n_z - 1);
    out.standard_error = std::sqrt(sample_var / n_z);
    return out;
}

TaskVarianceEstimate monte_carlo_task_variance(const TabularMdp& mdp, const FeatureMap& features,
                                               const TaskSamplerFn& sampler, int n_z,
                                               int n_policies, std::uint64_t seed) {
    if (n_z < 2 || n_policies < 2)
        throw std::invalid_argument("monte_carlo_task_variance: n_z and n_policies must be >= 2");
    const Eigen::MatrixXd occ =
        sample_state_occupancies(mdp, n_policies, mix_seed(seed, 0x901)) * features.phi;
    const TaskVectorSet tasks = sampler(n_z, mix_seed(seed, 0x2a5));
    return monte_carlo_task_variance(occ, tasks);
}

std::vector<SpectrumReport> dilution_curve(const TabularMdp& mdp, const Dataset* dataset,
                                           FeatureFamily family, const std::vector<int>& dims,
                                           const DilutionOptions& options, std::uint64_t seed) {
    if (dims.empty()) throw std::invalid_argument("dilution_curve: no dimensions");
    for (std::size_t i = 1; i < dims.size(); ++i)
        if (dims[i] <= dims[i - 1])
            throw std::invalid_argument("dilution_curve: dims must be strictly ascending");
    const bool need_dataset =
        options.estimator == DilutionEstimator::subtrajectories || family == FeatureFamily::lra_p;
    if (need_dataset && dataset == nullptr)
        throw std::invalid_argument("dilution_curve: this configuration needs a dataset");

    // The state-space sample is dimension-independent; feature occupancies for
    // every d are projections of the same rows.
    Eigen::MatrixXd base_rows;
    if (options.estimator == DilutionEstimator::policies)
        base_rows = sample_state_occupancies(mdp, options.n_policies, mix_seed(seed, 0xd11));
    else
        base_rows = subtrajectory_visit_vectors(*dataset, mdp.discount, options.n_sub,
                                                options.len_min, options.len_max,
                                                mix_seed(seed, 0xd12));

    Eigen::MatrixXd empirical;
    if (family == FeatureFamily::lra_p)
        empirical = empirical_transition_matrix(*dataset, mdp.n_states).matrix;

    std::vector<SpectrumReport> reports;
    reports.reserve(dims.size());
    FeatureBuildOptions build;
    build.whiten = options.whiten;
    build.seed = options.feature_seed;
    for (int d : dims) {
        const FeatureMap features = build_feature_family(
            mdp, family, d, family == FeatureFamily::lra_p ? &empirical : nullptr, build);
        reports.push_back(covariance_spectrum(base_rows * features.phi));
    }
    return reports;
}

} // namespace btdz
