#include <doctest.h>

#include <cmath>
#include <vector>

#include "btdz/errors.hpp"
#include "btdz/tasks.hpp"
#include "test_support.hpp"

using namespace btdz;

namespace {

Subtrajectory make_sub(std::vector<int> states) {
    Subtrajectory sub;
    sub.parent = 0;
    sub.start = 0;
    sub.length = static_cast<int>(states.size());
    sub.states = std::move(states);
    return sub;
}

Gmm tight_gmm(int d) {
    Gmm gmm;
    gmm.weights = Eigen::VectorXd::Ones(1);
    gmm.means = {Eigen::VectorXd::Unit(d, 0)};
    gmm.covariances = {Gmm::kEigenvalueFloor * Eigen::MatrixXd::Identity(d, d)};
    return gmm;
}

} // namespace

TEST_CASE("extract_task_vector: normalization and the two-state closed form") {
    FeatureMap f;
    f.phi.resize(2, 2);
    f.phi << 3.0, 4.0, 0.0, 1.0;
    const auto z = extract_task_vector(make_sub({0}), f, 0.9);
    REQUIRE(z.has_value());
    CHECK(z->z[0] == doctest::Approx(0.6));
    CHECK(z->z[1] == doctest::Approx(0.8));

    FeatureMap axes;
    axes.phi = Eigen::MatrixXd::Identity(2, 2);
    const auto z2 = extract_task_vector(make_sub({0, 1}), axes, 0.5);
    REQUIRE(z2.has_value());
    CHECK(z2->z[0] == doctest::Approx(0.89443).epsilon(1e-4));
    CHECK(z2->z[1] == doctest::Approx(0.44721).epsilon(1e-4));
}

TEST_CASE("extract_task_vector: all-zero features are rejected, not an error") {
    FeatureMap zero;
    zero.phi = Eigen::MatrixXd::Zero(3, 2);
    CHECK_FALSE(extract_task_vector(make_sub({0, 1, 2}), zero, 0.9).has_value());
}

TEST_CASE("build_pdata: constant-state dataset yields identical unit vectors") {
    Dataset d;
    d.n_states = 2;
    d.n_actions = 1;
    for (int i = 0; i < 4; ++i) d.trajectories.push_back(Trajectory{{1, 1, 1, 1}, {0, 0, 0}});
    FeatureMap f;
    f.phi.resize(2, 2);
    f.phi << 0.0, 0.0, 3.0, 4.0;
    const PdataResult p = build_pdata(d, f, 0.9, 64, 1, 4, 3);
    CHECK(p.rejections == 0);
    CHECK(p.set.size() == 64);
    p.set.validate();
    for (int i = 0; i < p.set.size(); ++i) {
        CHECK(p.set.vectors(i, 0) == doctest::Approx(0.6));
        CHECK(p.set.vectors(i, 1) == doctest::Approx(0.8));
    }
}

TEST_CASE("build_pdata: rejections are counted and the set shrinks accordingly") {
    Dataset d;
    d.n_states = 2;
    d.n_actions = 1;
    d.trajectories.push_back(Trajectory{{0, 0, 0}, {0, 0}}); // zero-feature state
    d.trajectories.push_back(Trajectory{{1, 1, 1}, {0, 0}});
    FeatureMap f;
    f.phi.resize(2, 2);
    f.phi << 0.0, 0.0, 1.0, 2.0;
    const PdataResult p = build_pdata(d, f, 0.9, 200, 1, 3, 5);
    CHECK(p.rejections > 0);
    CHECK(p.set.size() == 200 - p.rejections);
    p.set.validate();

    Dataset only_zero;
    only_zero.n_states = 2;
    only_zero.n_actions = 1;
    only_zero.trajectories.push_back(Trajectory{{0, 0}, {0}});
    CHECK_THROWS_AS(build_pdata(only_zero, f, 0.9, 10, 1, 2, 5), DegenerateFeaturesError);
}

TEST_CASE("build_pdata: zero discount keeps only the first state") {
    const TabularMdp mdp = test::random_mdp(4, 2, 0.9, 51);
    const Dataset d = generate_dataset(mdp, 10, 8, BehaviorSpec{}, 9);
    const FeatureMap f = test::random_features(4, 3, 52);
    const std::uint64_t seed = 31;
    const PdataResult p = build_pdata(d, f, 0.0, 50, 1, 6, seed);
    const auto subs = sample_subtrajectories(d, 50, 1, 6, seed); // same stream, same slices
    REQUIRE(p.set.size() == 50);
    for (int i = 0; i < 50; ++i) {
        const Eigen::VectorXd expected = f.phi.row(subs[i].states.front()).normalized();
        CHECK((p.set.vectors.row(i).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("sample_uniform_sphere: 0-sphere, concentration, second moment") {
    const TaskVectorSet signs = sample_uniform_sphere(1, 200, 3);
    for (int i = 0; i < signs.size(); ++i)
        CHECK(std::abs(std::abs(signs.vectors(i, 0)) - 1.0) < 1e-12);

    const int n = 100000, d = 50;
    const TaskVectorSet set = sample_uniform_sphere(d, n, 7);
    set.validate();
    CHECK(set.vectors.colwise().mean().norm() <= 0.02);

    const Eigen::MatrixXd second = set.vectors.transpose() * set.vectors / double(n);
    const Eigen::MatrixXd target = Eigen::MatrixXd::Identity(d, d) / double(d);
    CHECK((second - target).cwiseAbs().maxCoeff() <= 5.0 / std::sqrt(double(n)));
}

TEST_CASE("sample_btd: unit norms and concentration around a tight component") {
    const int d = 4, n = 10000;
    const TaskVectorSet set = sample_btd(tight_gmm(d), n, 11);
    set.validate();
    int close = 0;
    for (int i = 0; i < n; ++i) {
        const double cosine = set.vectors(i, 0); // dot with e1
        if (std::acos(std::min(1.0, cosine)) <= 0.01) ++close;
    }
    CHECK(close >= static_cast<int>(0.99 * n));

    const TaskVectorSet again = sample_btd(tight_gmm(d), n, 11);
    CHECK((set.vectors - again.vectors).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sample_mixed: endpoints reproduce the pure samplers exactly") {
    const int d = 5, n = 500;
    const std::uint64_t seed = 13;
    Gmm gmm = tight_gmm(d);
    const TaskVectorSet btd = sample_btd(gmm, n, seed);
    const TaskVectorSet uniform = sample_uniform_sphere(d, n, seed);
    const TaskVectorSet mixed0 = sample_mixed(0.0, gmm, d, n, seed);
    const TaskVectorSet mixed1 = sample_mixed(1.0, gmm, d, n, seed);
    CHECK((mixed0.vectors - btd.vectors).cwiseAbs().maxCoeff() == 0.0);
    CHECK((mixed1.vectors - uniform.vectors).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sample_mixed: source frequency matches alpha") {
    const int d = 6, n = 100000;
    const std::uint64_t seed = 17;
    Gmm gmm = tight_gmm(d);
    const TaskVectorSet uniform = sample_uniform_sphere(d, n, seed);
    const TaskVectorSet mixed = sample_mixed(0.5, gmm, d, n, seed);
    // under the shared-seed protocol each sample equals its uniform twin iff
    // the selector chose the uniform source
    int from_uniform = 0;
    for (int i = 0; i < n; ++i)
        if ((mixed.vectors.row(i) - uniform.vectors.row(i)).cwiseAbs().maxCoeff() == 0.0)
            ++from_uniform;
    CHECK(std::abs(from_uniform / double(n) - 0.5) <= 0.01);
}

TEST_CASE("heuristic_tasks: full-trajectory mode returns n vectors") {
    const TabularMdp mdp = test::random_mdp(4, 2, 0.9, 61);
    const Dataset d = generate_dataset(mdp, 20, 10, BehaviorSpec{}, 19);
    const FeatureMap f = test::random_features(4, 3, 62);
    const TaskVectorSet set =
        heuristic_tasks(d, f, 0.9, HeuristicMode::full_trajectory, 37, 23);
    CHECK(set.size() == 37);
    CHECK(set.provenance == TaskProvenance::full_trajectory);
    set.validate();
}

TEST_CASE("heuristic_tasks: subtrajectory outputs are achievable extractions") {
    const TabularMdp mdp = test::random_mdp(3, 2, 0.9, 63);
    const Dataset d = generate_dataset(mdp, 3, 4, BehaviorSpec{}, 29);
    const FeatureMap f = test::random_features(3, 2, 64);

    // enumerate every possible slice extraction as the membership oracle
    std::vector<Eigen::VectorXd> achievable;
    for (const auto& traj : d.trajectories) {
        const int n_states = traj.n_states();
        for (int start = 0; start < n_states; ++start)
            for (int len = 1; start + len <= n_states; ++len) {
                Subtrajectory sub;
                sub.states.assign(traj.states.begin() + start, traj.states.begin() + start + len);
                sub.length = len;
                if (auto z = extract_task_vector(sub, f, 0.9)) achievable.push_back(z->z);
            }
    }
    HeuristicOptions opts;
    opts.n_sub = 200;
    opts.len_min = 1;
    opts.len_max = 5;
    const TaskVectorSet set =
        heuristic_tasks(d, f, 0.9, HeuristicMode::subtrajectory, 50, 31, opts);
    for (int i = 0; i < set.size(); ++i) {
        double best = 1e300;
        for (const auto& z : achievable)
            best = std::min(best, (set.vectors.row(i).transpose() - z).norm());
        CHECK(best < 1e-12);
    }
}

TEST_CASE("heuristic_tasks: degenerate length range makes both modes draw whole trajectories") {
    const TabularMdp mdp = test::random_mdp(3, 2, 0.9, 65);
    const Dataset d = generate_dataset(mdp, 5, 6, BehaviorSpec{}, 37);
    const FeatureMap f = test::random_features(3, 2, 66);

    std::vector<Eigen::VectorXd> whole;
    for (const auto& traj : d.trajectories) {
        Subtrajectory sub;
        sub.states = traj.states;
        sub.length = traj.n_states();
        whole.push_back(extract_task_vector(sub, f, 0.9)->z);
    }
    HeuristicOptions opts;
    opts.n_sub = 100;
    opts.len_min = 7; // = traj states
    opts.len_max = 7;
    for (const auto mode : {HeuristicMode::subtrajectory, HeuristicMode::full_trajectory}) {
        const TaskVectorSet set = heuristic_tasks(d, f, 0.9, mode, 30, 41, opts);
        for (int i = 0; i < set.size(); ++i) {
            double best = 1e300;
            for (const auto& z : whole)
                best = std::min(best, (set.vectors.row(i).transpose() - z).norm());
            CHECK(best < 1e-12);
        }
    }
}

TEST_CASE("task vector set binary round-trip") {
    const TaskVectorSet set = sample_uniform_sphere(6, 40, 43);
    const std::string path = "test_tasks_roundtrip.bin";
    save_task_vectors(set, path);
    const TaskVectorSet back = load_task_vectors(path);
    CHECK(back.provenance == set.provenance);
    CHECK((back.vectors - set.vectors).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path.c_str());
}
