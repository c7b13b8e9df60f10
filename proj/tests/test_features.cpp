#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "btdz/errors.hpp"
#include "btdz/features.hpp"
#include "btdz/spectrum.hpp"
#include "test_support.hpp"

using namespace btdz;

namespace {

/// Least-squares reconstruction residual: min_f ||target - f phi^T||_F^2.
/// Independent of the SVD used to build the features.
double reconstruction_error2(const Eigen::MatrixXd& target, const Eigen::MatrixXd& phi) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(phi);
    const Eigen::MatrixXd f = qr.solve(target.transpose()).transpose();
    return (target - f * phi.transpose()).squaredNorm();
}

Eigen::MatrixXd random_stochastic(int n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd p(n, n);
    for (int s = 0; s < n; ++s) {
        for (int t = 0; t < n; ++t) p(s, t) = 0.05 + rng.uniform();
        p.row(s) /= p.row(s).sum();
    }
    return p;
}

Eigen::VectorXd uniform_rho(int n) { return Eigen::VectorXd::Constant(n, 1.0 / n); }

} // namespace

TEST_CASE("onehot_features: identity with unit rows") {
    const TabularMdp mdp = test::random_mdp(3, 2, 0.9, 7);
    const FeatureMap f = onehot_features(mdp);
    CHECK(f.dim() == 3);
    CHECK((f.phi - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
    for (int s = 0; s < 3; ++s) CHECK(f.phi.row(s).norm() == doctest::Approx(1.0));
}

TEST_CASE("lra_p_features: exact reconstruction at the matrix rank") {
    // two distinct rows -> rank-2 stochastic matrix
    const int n = 6;
    Eigen::MatrixXd p(n, n);
    Eigen::RowVectorXd row_a(n), row_b(n);
    row_a << 0.4, 0.3, 0.1, 0.1, 0.05, 0.05;
    row_b << 0.05, 0.05, 0.2, 0.2, 0.25, 0.25;
    for (int s = 0; s < n; ++s) p.row(s) = (s < 3) ? row_a : row_b;

    const FeatureMap f = lra_p_features(p, 2);
    CHECK(reconstruction_error2(p, f.phi) < 1e-16);

    const FeatureMap f3 = lra_p_features(p, 3);
    CHECK(reconstruction_error2(p, f3.phi) < 1e-16);
}

TEST_CASE("lra_p_features: d=1 on a doubly stochastic matrix finds the uniform direction") {
    const int n = 4;
    Eigen::MatrixXd p(n, n);
    for (int s = 0; s < n; ++s) {
        p.row(s).setZero();
        p(s, s) = 0.4;
        p(s, (s + 1) % n) = 0.3;
        p(s, (s + n - 1) % n) = 0.3;
    }
    const FeatureMap f = lra_p_features(p, 1);
    // independent eigensolver oracle on P^T P
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.transpose() * p);
    const double sigma1 = std::sqrt(es.eigenvalues()(n - 1));
    Eigen::VectorXd lead = es.eigenvectors().col(n - 1);
    if (lead[0] < 0) lead = -lead;
    CHECK((f.phi.col(0) - std::sqrt(sigma1) * lead).cwiseAbs().maxCoeff() < 1e-9);
    // for this symmetric doubly stochastic matrix the leading direction is uniform
    CHECK((lead - Eigen::VectorXd::Constant(n, 0.5)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("lra_p_features: truncation error equals the discarded singular values") {
    const Eigen::MatrixXd p = random_stochastic(7, 13);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.transpose() * p);
    const Eigen::VectorXd sigma2 = es.eigenvalues().reverse(); // sigma_i^2, descending
    for (int d = 1; d <= 7; ++d) {
        const FeatureMap f = lra_p_features(p, d);
        const double expected = sigma2.tail(7 - d).sum();
        CHECK(reconstruction_error2(p, f.phi) == doctest::Approx(expected).epsilon(1e-8));
    }
    CHECK_THROWS_AS(lra_p_features(p, 8), std::invalid_argument);
}

TEST_CASE("lra_p reconstruction error is non-increasing in d") {
    const Eigen::MatrixXd p = random_stochastic(6, 17);
    double prev = 1e300;
    for (int d = 1; d <= 6; ++d) {
        const double err = reconstruction_error2(p, lra_p_features(p, d).phi);
        CHECK(err <= prev + 1e-10);
        prev = err;
    }
}

TEST_CASE("lra_sr_features: zero discount gives a scaled canonical axis subset") {
    const TabularMdp mdp = test::chain_mdp(5, 0.0);
    const FeatureMap f = lra_sr_features(mdp, uniform_random_policy(mdp), 3);
    // M = I, so each whitened column is one positive axis direction
    for (int c = 0; c < 3; ++c) {
        int nonzero = 0;
        for (int s = 0; s < 5; ++s)
            if (std::abs(f.phi(s, c)) > 1e-8) {
                ++nonzero;
                CHECK(f.phi(s, c) > 0.0);
            }
        CHECK(nonzero == 1);
    }
    // whitened against the uniform distribution
    const Eigen::MatrixXd second = f.phi.transpose() * uniform_rho(5).asDiagonal() * f.phi;
    CHECK((second - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("lra_sr_features: full dimension reconstructs the successor measure") {
    const TabularMdp mdp = test::chain_mdp(5, 0.9);
    const StochasticPolicy beta = uniform_random_policy(mdp);
    const Eigen::MatrixXd m =
        (Eigen::MatrixXd::Identity(5, 5) - mdp.discount * policy_transition_matrix(mdp, beta))
            .inverse();
    const FeatureMap f = lra_sr_features(mdp, beta, 5);
    CHECK(reconstruction_error2(m, f.phi) < 1e-16);
}

TEST_CASE("lra_sr_features: rank-2 reconstruction error matches the spectral tail") {
    const TabularMdp mdp = test::chain_mdp(5, 0.9);
    const StochasticPolicy beta = uniform_random_policy(mdp);
    const Eigen::MatrixXd m =
        (Eigen::MatrixXd::Identity(5, 5) - mdp.discount * policy_transition_matrix(mdp, beta))
            .inverse();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
    const double expected = es.eigenvalues().head(3).sum(); // discarded sigma^2, ascending order
    const FeatureMap f = lra_sr_features(mdp, beta, 2);
    CHECK(reconstruction_error2(m, f.phi) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("random_orthonormal_features: orthonormal, deterministic, seed-sensitive") {
    const FeatureMap f = random_orthonormal_features(8, 4, 42);
    CHECK((f.phi.transpose() * f.phi - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <
          1e-10);

    const FeatureMap again = random_orthonormal_features(8, 4, 42);
    CHECK((f.phi - again.phi).cwiseAbs().maxCoeff() == 0.0);

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const FeatureMap a = random_orthonormal_features(6, 3, seed);
        const FeatureMap b = random_orthonormal_features(6, 3, seed + 1);
        CHECK((a.phi - b.phi).norm() > 0.0);
    }
    CHECK_THROWS_AS(random_orthonormal_features(4, 5, 0), std::invalid_argument);
}

TEST_CASE("whiten_features: unit second moment, idempotence, scale invariance") {
    const FeatureMap raw = test::random_features(10, 4, 5);
    const Eigen::VectorXd rho = uniform_rho(10);
    const FeatureMap white = whiten_features(raw, rho);

    const Eigen::MatrixXd second = white.phi.transpose() * rho.asDiagonal() * white.phi;
    CHECK((second - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-6);

    const FeatureMap twice = whiten_features(white, rho);
    CHECK((twice.phi - white.phi).cwiseAbs().maxCoeff() < 1e-6);

    FeatureMap scaled{10.0 * raw.phi};
    const FeatureMap white_scaled = whiten_features(scaled, rho);
    CHECK((white_scaled.phi - white.phi).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("whiten_features: rank deficiency is reported with the effective rank") {
    FeatureMap f = test::random_features(8, 3, 6);
    FeatureMap padded;
    padded.phi.resize(8, 5);
    padded.phi << f.phi, f.phi.col(0), f.phi.col(1); // duplicated columns, rank 3
    try {
        whiten_features(padded, uniform_rho(8));
        FAIL("expected DegenerateFeaturesError");
    } catch (const DegenerateFeaturesError& e) {
        CHECK(e.rank == 3);
    }
}

TEST_CASE("build_feature_family: complement padding past the spectral rank") {
    // rank-2 empirical transition matrix, request d = 4
    const int n = 6;
    Eigen::MatrixXd p(n, n);
    Eigen::RowVectorXd row_a(n), row_b(n);
    row_a << 0.4, 0.3, 0.1, 0.1, 0.05, 0.05;
    row_b << 0.05, 0.05, 0.2, 0.2, 0.25, 0.25;
    for (int s = 0; s < n; ++s) p.row(s) = (s < 3) ? row_a : row_b;

    const TabularMdp mdp = test::random_mdp(n, 2, 0.9, 23);
    FeatureBuildOptions opts;
    opts.whiten = true;
    opts.seed = 3;
    const FeatureMap f = build_feature_family(mdp, FeatureFamily::lra_p, 4, &p, opts);
    CHECK(f.dim() == 4);
    const Eigen::MatrixXd second = f.phi.transpose() * uniform_rho(n).asDiagonal() * f.phi;
    CHECK((second - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-6);
    // spectral part still reconstructs the rank-2 target
    CHECK(reconstruction_error2(p, f.phi) < 1e-12);

    const FeatureMap again = build_feature_family(mdp, FeatureFamily::lra_p, 4, &p, opts);
    CHECK((f.phi - again.phi).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("build_feature_family: embedding beyond n_states preserves the covariance trace") {
    const TabularMdp mdp = test::chain_mdp(6, 0.9);
    FeatureBuildOptions opts;
    opts.whiten = true;
    opts.seed = 11;
    const FeatureMap base =
        build_feature_family(mdp, FeatureFamily::random_orthonormal, 6, nullptr, opts);
    const FeatureMap embedded =
        build_feature_family(mdp, FeatureFamily::random_orthonormal, 10, nullptr, opts);
    CHECK(embedded.dim() == 10);
    // row norms are preserved by the rotation
    for (int s = 0; s < 6; ++s)
        CHECK(embedded.phi.row(s).norm() == doctest::Approx(base.phi.row(s).norm()).epsilon(1e-9));

    const Eigen::MatrixXd occ = sample_state_occupancies(mdp, 64, 99);
    const SpectrumReport low = covariance_spectrum(occ * base.phi);
    const SpectrumReport high = covariance_spectrum(occ * embedded.phi);
    CHECK(high.trace == doctest::Approx(low.trace).epsilon(1e-9));
    CHECK(high.normalized_trace < low.normalized_trace);
}

TEST_CASE("feature family names round-trip") {
    for (const auto family : {FeatureFamily::onehot, FeatureFamily::lra_p, FeatureFamily::lra_sr,
                              FeatureFamily::random_orthonormal})
        CHECK(feature_family_from_name(feature_family_name(family)) == family);
    CHECK_THROWS_AS(feature_family_from_name("mlp"), std::invalid_argument);
}
