#include "btdz/features.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "btdz/errors.hpp"
#include "btdz/rng.hpp"

namespace btdz {

namespace {

constexpr double kWhitenRidge = 1e-8;
constexpr double kRankRelTol = 1e-10;

void fix_column_signs(Eigen::MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            if (std::abs(m(r, c)) > 1e-12) {
                if (m(r, c) < 0.0) m.col(c) = -m.col(c);
                break;
            }
        }
    }
}

struct SpectralFactor {
    Eigen::MatrixXd columns;       // n x d, V_d * sqrt(S_d), sign-fixed
    Eigen::VectorXd singular_values;
};

SpectralFactor right_factor(const Eigen::MatrixXd& target, int d) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(target, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SpectralFactor out;
    out.singular_values = svd.singularValues().head(d);
    Eigen::MatrixXd v = svd.matrixV().leftCols(d);
    fix_column_signs(v);
    out.columns = v * out.singular_values.cwiseSqrt().asDiagonal();
    return out;
}

Eigen::MatrixXd gaussian_matrix(int rows, int cols, Rng& rng) {
    Eigen::MatrixXd g(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) g(r, c) = rng.normal();
    return g;
}

/// Thin Q of a QR decomposition, with column signs chosen so the corresponding
/// diagonal of R is nonnegative.
Eigen::MatrixXd thin_q(const Eigen::MatrixXd& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    const int k = static_cast<int>(std::min(m.rows(), m.cols()));
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), k);
    const Eigen::MatrixXd r = q.transpose() * m;
    for (int c = 0; c < k; ++c)
        if (r(c, c) < 0.0) q.col(c) = -q.col(c);
    return q;
}

/// k orthonormal columns orthogonal to the span of `occupied`.
Eigen::MatrixXd complement_columns(const Eigen::MatrixXd& occupied, int k, Rng& rng) {
    const int n = static_cast<int>(occupied.rows());
    Eigen::MatrixXd g = gaussian_matrix(n, k, rng);
    if (occupied.cols() > 0) {
        const Eigen::MatrixXd basis = thin_q(occupied);
        g -= basis * (basis.transpose() * g);
        g -= basis * (basis.transpose() * g); // second pass removes roundoff leakage
    }
    return thin_q(g);
}

Eigen::MatrixXd random_rotation(int d, Rng& rng) { return thin_q(gaussian_matrix(d, d, rng)); }

int effective_rank(const Eigen::VectorXd& singular_values) {
    if (singular_values.size() == 0) return 0;
    const double thr = singular_values[0] * kRankRelTol;
    int r = 0;
    while (r < singular_values.size() && singular_values[r] > thr) ++r;
    return r;
}

Eigen::VectorXd uniform_rho(int n) { return Eigen::VectorXd::Constant(n, 1.0 / n); }

} // namespace

FeatureMap onehot_features(const TabularMdp& mdp) {
    return FeatureMap{Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states)};
}

FeatureMap lra_p_features(const Eigen::MatrixXd& empirical_transitions, int d) {
    const int n = static_cast<int>(empirical_transitions.rows());
    if (empirical_transitions.cols() != n)
        throw std::invalid_argument("lra_p_features: transition matrix must be square");
    if (d < 1 || d > n)
        throw std::invalid_argument("lra_p_features: d must lie in [1, n_states]");
    for (int s = 0; s < n; ++s)
        if (std::abs(empirical_transitions.row(s).sum() - 1.0) > 1e-9)
            throw std::invalid_argument("lra_p_features: row " + std::to_string(s) +
                                        " does not sum to 1");
    return FeatureMap{right_factor(empirical_transitions, d).columns};
}

FeatureMap lra_sr_features(const TabularMdp& mdp, const StochasticPolicy& behavior, int d) {
    mdp.validate();
    behavior.validate(mdp);
    const int n = mdp.n_states;
    if (d < 1 || d > n) throw std::invalid_argument("lra_sr_features: d must lie in [1, n_states]");
    const Eigen::MatrixXd p_beta = policy_transition_matrix(mdp, behavior);
    const Eigen::MatrixXd successor_measure =
        (Eigen::MatrixXd::Identity(n, n) - mdp.discount * p_beta).inverse();
    FeatureMap raw{right_factor(successor_measure, d).columns};
    return whiten_features(raw, uniform_rho(n));
}

FeatureMap random_orthonormal_features(int n_states, int d, std::uint64_t seed) {
    if (d < 1 || d > n_states)
        throw std::invalid_argument("random_orthonormal_features: d must lie in [1, n_states]");
    Rng rng(mix_seed(seed, 0x0f2a));
    return FeatureMap{thin_q(gaussian_matrix(n_states, d, rng))};
}

FeatureMap whiten_features(const FeatureMap& features, const Eigen::VectorXd& rho) {
    const int n = features.n_states();
    const int d = features.dim();
    if (rho.size() != n) throw std::invalid_argument("whiten_features: rho has wrong length");
    if (rho.minCoeff() < 0.0 || std::abs(rho.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("whiten_features: rho is not a distribution");

    const Eigen::MatrixXd second_moment =
        features.phi.transpose() * rho.asDiagonal() * features.phi;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(second_moment);
    if (es.info() != Eigen::Success)
        throw NumericalError("whiten_features: eigendecomposition failed");
    const Eigen::VectorXd eig = es.eigenvalues(); // ascending
    const double top = eig[d - 1];
    int rank = 0;
    for (int i = 0; i < d; ++i)
        if (eig[i] > top * kRankRelTol) ++rank;
    if (rank < d)
        throw DegenerateFeaturesError("whiten_features: second moment is rank-deficient", rank);

    const Eigen::VectorXd inv_sqrt = (eig.array() + kWhitenRidge).rsqrt();
    const Eigen::MatrixXd w =
        es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
    return FeatureMap{features.phi * w};
}

FeatureFamily feature_family_from_name(const std::string& name) {
    if (name == "onehot") return FeatureFamily::onehot;
    if (name == "lra_p") return FeatureFamily::lra_p;
    if (name == "lra_sr") return FeatureFamily::lra_sr;
    if (name == "random_orthonormal") return FeatureFamily::random_orthonormal;
    throw std::invalid_argument("unknown feature family: " + name);
}

std::string feature_family_name(FeatureFamily family) {
    switch (family) {
        case FeatureFamily::onehot: return "onehot";
        case FeatureFamily::lra_p: return "lra_p";
        case FeatureFamily::lra_sr: return "lra_sr";
        case FeatureFamily::random_orthonormal: return "random_orthonormal";
    }
    return "?";
}

FeatureMap build_feature_family(const TabularMdp& mdp, FeatureFamily family, int d,
                                const Eigen::MatrixXd* empirical_transitions,
                                const FeatureBuildOptions& options) {
    if (d < 1) throw std::invalid_argument("build_feature_family: d must be positive");
    const int n = mdp.n_states;
    const int d_inner = std::min(d, n);
    Rng pad_rng(mix_seed(options.seed, 0xbead));

    Eigen::MatrixXd base;
    switch (family) {
        case FeatureFamily::onehot: {
            if (d < n)
                throw std::invalid_argument("build_feature_family: onehot requires d >= n_states");
            base = Eigen::MatrixXd::Identity(n, n);
            break;
        }
        case FeatureFamily::random_orthonormal: {
            base = random_orthonormal_features(n, d_inner, options.seed).phi;
            break;
        }
        case FeatureFamily::lra_p:
        case FeatureFamily::lra_sr: {
            Eigen::MatrixXd target;
            if (family == FeatureFamily::lra_p) {
                if (empirical_transitions == nullptr)
                    throw std::invalid_argument(
                        "build_feature_family: lra_p needs an empirical transition matrix");
                target = *empirical_transitions;
            } else {
                const Eigen::MatrixXd p_beta =
                    policy_transition_matrix(mdp, uniform_random_policy(mdp));
                target = (Eigen::MatrixXd::Identity(n, n) - mdp.discount * p_beta).inverse();
            }
            SpectralFactor factor = right_factor(target, d_inner);
            const int rank = std::min(effective_rank(factor.singular_values), d_inner);
            base = factor.columns.leftCols(rank);
            if (rank < d_inner) {
                // sweep dimension exceeds the spectral target's effective rank:
                // fill with seeded orthonormal directions from the complement
                Eigen::MatrixXd extra = complement_columns(base, d_inner - rank, pad_rng);
                Eigen::MatrixXd joined(n, d_inner);
                joined << base, extra;
                base = joined;
            }
            break;
        }
    }

    FeatureMap map{base};
    if (options.whiten) map = whiten_features(map, uniform_rho(n));

    if (d > n) {
        // isometric embedding: append zero columns, then rotate in R^d
        Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(n, d);
        padded.leftCols(n) = map.phi;
        Rng rot_rng(mix_seed(options.seed, 0x307a7e));
        map.phi = padded * random_rotation(d, rot_rng);
    }
    return map;
}

} // namespace btdz
