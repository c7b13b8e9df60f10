#include <doctest.h>

#include <cmath>

#include "btdz/envs.hpp"
#include "btdz/spectrum.hpp"
#include "test_support.hpp"

using namespace btdz;

namespace {

Eigen::MatrixXd two_pass_covariance(const Eigen::MatrixXd& rows) {
    const Eigen::RowVectorXd mean = rows.colwise().mean();
    const Eigen::MatrixXd centered = rows.rowwise() - mean;
    return centered.transpose() * centered / static_cast<double>(rows.rows());
}

} // namespace

TEST_CASE("behavioral_covariance_policies: single behavior means zero spectrum") {
    TabularMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 2;
    mdp.discount = 0.9;
    mdp.transitions = {Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1)};
    mdp.initial_dist = Eigen::VectorXd::Ones(1);
    FeatureMap f;
    f.phi = Eigen::MatrixXd::Constant(1, 3, 2.0);
    const SpectrumReport report = behavioral_covariance_policies(mdp, f, 16, 5);
    report.validate();
    CHECK(report.trace == doctest::Approx(0.0));
    CHECK(report.eigenvalues.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("behavioral_covariance_policies: eigenvalues scale with the feature scale squared") {
    const TabularMdp mdp = test::chain_mdp(5, 0.9);
    const FeatureMap f = test::random_features(5, 3, 7);
    FeatureMap scaled{3.0 * f.phi};
    const SpectrumReport base = behavioral_covariance_policies(mdp, f, 64, 9);
    const SpectrumReport big = behavioral_covariance_policies(mdp, scaled, 64, 9);
    CHECK((big.eigenvalues - 9.0 * base.eigenvalues).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("behavioral_covariance_policies_exhaustive: matches an independent covariance") {
    const TabularMdp mdp = test::random_mdp(3, 2, 0.9, 11);
    const FeatureMap f = test::random_features(3, 2, 12);
    const SpectrumReport report = behavioral_covariance_policies_exhaustive(mdp, f);
    report.validate();

    const auto policies = test::all_policies(mdp);
    REQUIRE(policies.size() == 8);
    Eigen::MatrixXd rows(8, 2);
    for (std::size_t i = 0; i < policies.size(); ++i)
        rows.row(static_cast<Eigen::Index>(i)) =
            feature_occupancy(mdp, policies[i], f).psi.transpose();
    const Eigen::MatrixXd cov = two_pass_covariance(rows);
    CHECK(report.trace == doctest::Approx(cov.trace()).epsilon(1e-12));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    CHECK((report.eigenvalues.reverse() - es.eigenvalues()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("behavioral_covariance_subtraj: constant dataset gives zero covariance") {
    Dataset d;
    d.n_states = 3;
    d.n_actions = 1;
    for (int i = 0; i < 5; ++i) d.trajectories.push_back(Trajectory{{2, 2, 2, 2}, {0, 0, 0}});
    const FeatureMap f = test::random_features(3, 2, 13);
    const SpectrumReport report = behavioral_covariance_subtraj(d, f, 0.9, 100, 4, 4, 17);
    CHECK(report.trace < 1e-18);
}

TEST_CASE("behavioral_covariance_subtraj: deterministic and equal to a direct recomputation") {
    const TabularMdp mdp = test::random_mdp(4, 2, 0.9, 19);
    const Dataset d = generate_dataset(mdp, 20, 12, BehaviorSpec{}, 3);
    const FeatureMap f = test::random_features(4, 3, 21);

    const SpectrumReport a = behavioral_covariance_subtraj(d, f, 0.9, 500, 2, 8, 23);
    const SpectrumReport b = behavioral_covariance_subtraj(d, f, 0.9, 500, 2, 8, 23);
    CHECK((a.eigenvalues - b.eigenvalues).cwiseAbs().maxCoeff() == 0.0);

    const Eigen::MatrixXd visits = subtrajectory_visit_vectors(d, 0.9, 500, 2, 8, 23);
    const Eigen::MatrixXd cov = two_pass_covariance(visits * f.phi);
    CHECK(a.trace == doctest::Approx(cov.trace()).epsilon(1e-12));
}

TEST_CASE("expected_uniform_task_variance: arithmetic on the spectrum") {
    SpectrumReport zero;
    zero.dim = 4;
    zero.trace = 0.0;
    zero.normalized_trace = 0.0;
    zero.eigenvalues = Eigen::VectorXd::Zero(4);
    CHECK(expected_uniform_task_variance(zero) == 0.0);

    SpectrumReport skew;
    skew.dim = 50;
    skew.eigenvalues = Eigen::VectorXd::Zero(50);
    skew.eigenvalues[0] = 1.0;
    skew.trace = 1.0;
    skew.normalized_trace = 0.02;
    CHECK(expected_uniform_task_variance(skew) == doctest::Approx(0.02));
}

TEST_CASE("monte_carlo_task_variance: uniform tasks recover trace/d within 3 standard errors") {
    const TabularMdp mdp = test::chain_mdp(6, 0.9);
    const FeatureMap f = test::random_features(6, 4, 25);
    const Eigen::MatrixXd occ = sample_state_occupancies(mdp, 128, 27) * f.phi;
    const SpectrumReport spectrum = covariance_spectrum(occ);
    const TaskVectorSet tasks = sample_uniform_sphere(4, 2000, 29);
    const TaskVarianceEstimate mc = monte_carlo_task_variance(occ, tasks);
    CHECK(std::abs(mc.estimate - expected_uniform_task_variance(spectrum)) <=
          3.0 * mc.standard_error);
}

TEST_CASE("monte_carlo_task_variance: per-task quadratic-form identity within 1e-9") {
    const TabularMdp mdp = test::chain_mdp(5, 0.9);
    const FeatureMap f = test::random_features(5, 3, 31);
    const Eigen::MatrixXd occ = sample_state_occupancies(mdp, 256, 33) * f.phi;
    const Eigen::MatrixXd cov = two_pass_covariance(occ);
    const TaskVectorSet tasks = sample_uniform_sphere(3, 1000, 35);
    for (int i = 0; i < tasks.size(); ++i) {
        const Eigen::VectorXd z = tasks.vectors.row(i).transpose();
        CHECK(std::abs(return_variance(occ, z) - z.dot(cov * z)) <= 1e-9);
    }
}

TEST_CASE("monte_carlo_task_variance: tasks concentrated on the top eigenvector see lambda_1") {
    // features whose first column carries nearly all inter-policy variance;
    // lambda_1 / (trace / d) can approach d at most, so use a moderate d
    const int d = 16;
    const TabularMdp mdp = test::chain_mdp(6, 0.9);
    FeatureMap f;
    f.phi.resize(6, d);
    for (int s = 0; s < 6; ++s) {
        f.phi(s, 0) = s;
        for (int k = 1; k < d; ++k) f.phi(s, k) = 1e-3 * std::sin(1.0 + s + 3.0 * k);
    }
    const Eigen::MatrixXd occ = sample_state_occupancies(mdp, 256, 37) * f.phi;
    const SpectrumReport spectrum = covariance_spectrum(occ);
    const double lambda1 = spectrum.eigenvalues[0];
    CHECK(lambda1 > 10.0 * expected_uniform_task_variance(spectrum));

    const Eigen::MatrixXd cov = two_pass_covariance(occ);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Gmm concentrated;
    concentrated.weights = Eigen::VectorXd::Ones(1);
    concentrated.means = {es.eigenvectors().col(d - 1)}; // top eigenvector (ascending order)
    concentrated.covariances = {Gmm::kEigenvalueFloor * Eigen::MatrixXd::Identity(d, d)};
    const TaskVectorSet tasks = sample_btd(concentrated, 500, 39);
    const TaskVarianceEstimate mc = monte_carlo_task_variance(occ, tasks);
    CHECK(mc.estimate == doctest::Approx(lambda1).epsilon(0.05));
    CHECK(mc.estimate > 5.0 * expected_uniform_task_variance(spectrum));
}

TEST_CASE("monte_carlo_task_variance: single-behavior MDP estimates exactly zero") {
    TabularMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 2;
    mdp.discount = 0.5;
    mdp.transitions = {Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1)};
    mdp.initial_dist = Eigen::VectorXd::Ones(1);
    FeatureMap f;
    f.phi = Eigen::MatrixXd::Constant(1, 2, 1.0);
    const TaskVarianceEstimate mc = monte_carlo_task_variance(
        mdp, f, [](int n, std::uint64_t seed) { return sample_uniform_sphere(2, n, seed); }, 50,
        16, 41);
    CHECK(mc.estimate == doctest::Approx(0.0));
}

TEST_CASE("dilution_curve: single point, determinism, and endpoint decay") {
    const BenchmarkEnv env = make_fourroom8(0.99);
    DilutionOptions options;
    options.estimator = DilutionEstimator::policies;
    options.n_policies = 128;
    options.whiten = true;
    options.feature_seed = 4;

    const auto single = dilution_curve(env.mdp, nullptr, FeatureFamily::random_orthonormal, {8},
                                       options, 51);
    REQUIRE(single.size() == 1);
    CHECK(single[0].normalized_trace > 0.0);
    single[0].validate();

    const auto again = dilution_curve(env.mdp, nullptr, FeatureFamily::random_orthonormal, {8},
                                      options, 51);
    CHECK(again[0].trace == single[0].trace);

    const auto curve = dilution_curve(env.mdp, nullptr, FeatureFamily::random_orthonormal,
                                      {4, 64}, options, 51);
    REQUIRE(curve.size() == 2);
    CHECK(curve[1].normalized_trace < curve[0].normalized_trace);

    CHECK_THROWS_AS(dilution_curve(env.mdp, nullptr, FeatureFamily::random_orthonormal, {8, 4},
                                   options, 51),
                    std::invalid_argument);
}

TEST_CASE("dilution_curve: subtrajectory estimator needs a dataset and runs on one") {
    const BenchmarkEnv env = make_corridor12(0.99);
    DilutionOptions options;
    options.estimator = DilutionEstimator::subtrajectories;
    options.n_sub = 2000;
    options.len_min = 2;
    options.len_max = 20;
    CHECK_THROWS_AS(
        dilution_curve(env.mdp, nullptr, FeatureFamily::lra_sr, {2, 4}, options, 53),
        std::invalid_argument);

    const Dataset d = generate_dataset(env.mdp, 200, 40, BehaviorSpec{}, 55);
    const auto curve = dilution_curve(env.mdp, &d, FeatureFamily::lra_sr, {2, 4, 8}, options, 57);
    REQUIRE(curve.size() == 3);
    for (const auto& report : curve) report.validate();
}
