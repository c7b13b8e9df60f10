#pragma once

#include <cstdint>
#include <string>

#include "btdz/mdp.hpp"

namespace btdz {

/// d = n_states, phi = identity. The maximal-information baseline.
FeatureMap onehot_features(const TabularMdp& mdp);

/// Top-d right singular vectors of an empirical one-step transition matrix,
/// scaled by the square roots of the singular values. Columns are sign-fixed
/// so the first nonzero entry of each is positive. Requires d <= n_states.
FeatureMap lra_p_features(const Eigen::MatrixXd& empirical_transitions, int d);

/// Right factor of the exact successor measure M = (I - gamma * P_beta)^-1 of
/// the behavior policy: top-d SVD with the same sign convention, then whitened
/// against the uniform state distribution.
FeatureMap lra_sr_features(const TabularMdp& mdp, const StochasticPolicy& behavior, int d);

/// Orthonormal columns from a QR of a seeded Gaussian matrix. Deterministic
/// per seed. Requires d <= n_states.
FeatureMap random_orthonormal_features(int n_states, int d, std::uint64_t seed);

/// Rescales features so the second moment under rho is the identity:
/// phi' = phi * (E_rho[phi phi^T] + 1e-8 I)^(-1/2).
///
/// Throws DegenerateFeaturesError (carrying the effective rank) when the
/// second-moment matrix has rank below d on the support of rho.
FeatureMap whiten_features(const FeatureMap& features, const Eigen::VectorXd& rho);

enum class FeatureFamily { onehot, lra_p, lra_sr, random_orthonormal };

FeatureFamily feature_family_from_name(const std::string& name);
std::string feature_family_name(FeatureFamily family);

struct FeatureBuildOptions {
    bool whiten = true;     // against the uniform state distribution
    std::uint64_t seed = 0; // drives random columns, complement padding, embedding
};

/// Builds a feature family member at an arbitrary dimension d for sweeps.
///
/// Spectral families keep their top singular directions up to the effective
/// rank; any remaining columns up to min(d, n_states) are random orthonormal
/// directions in the orthogonal complement. When d exceeds n_states the
/// full-rank map (whitened if requested) is embedded isometrically into R^d by
/// a seeded random rotation, which preserves every achievable return and the
/// covariance trace. lra_p requires `empirical_transitions`; the other
/// families ignore it.
FeatureMap build_feature_family(const TabularMdp& mdp, FeatureFamily family, int d,
                                const Eigen::MatrixXd* empirical_transitions,
                                const FeatureBuildOptions& options);

} // namespace btdz
