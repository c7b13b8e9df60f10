#include "btdz/gmm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "btdz/errors.hpp"

namespace btdz {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

struct ComponentCache {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double log_det = 0.0; // of the covariance
};

ComponentCache cholesky_of(const Eigen::MatrixXd& cov) {
    ComponentCache c;
    c.llt.compute(cov);
    if (c.llt.info() != Eigen::Success)
        throw NumericalError("Gmm: covariance is not positive definite");
    const auto& l = c.llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) c.log_det += 2.0 * std::log(l(i, i));
    return c;
}

/// Log-density of every point under one component: points is N x d.
Eigen::VectorXd component_log_density(const Eigen::MatrixXd& points, const Eigen::VectorXd& mean,
                                      const ComponentCache& cache) {
    const int d = static_cast<int>(mean.size());
    Eigen::MatrixXd centered = (points.rowwise() - mean.transpose()).transpose(); // d x N
    cache.llt.matrixL().solveInPlace(centered);
    const double constant = -0.5 * (d * kLogTwoPi + cache.log_det);
    return (-0.5 * centered.colwise().squaredNorm().array() + constant).transpose();
}

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& cov, double floor) {
    Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success)
        throw NumericalError("Gmm: eigendecomposition of a covariance failed");
    if (es.eigenvalues().minCoeff() >= floor) return sym;
    const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(floor);
    return es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
}

/// Seeded k-means++ seeding: returns k row indices of `points`.
std::vector<int> kmeanspp_centers(const Eigen::MatrixXd& points, int k, Rng& rng) {
    const int n = static_cast<int>(points.rows());
    std::vector<int> centers;
    centers.push_back(rng.uniform_int(n));
    Eigen::VectorXd dist2 =
        (points.rowwise() - points.row(centers[0])).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < k) {
        int pick;
        if (dist2.sum() > 0.0) {
            pick = rng.categorical(dist2);
        } else {
            pick = rng.uniform_int(n); // all remaining points coincide with a center
        }
        centers.push_back(pick);
        dist2 = dist2.cwiseMin(
            (points.rowwise() - points.row(pick)).rowwise().squaredNorm().eval());
    }
    return centers;
}

Gmm init_from_kmeanspp(const Eigen::MatrixXd& points, int k, Rng& rng) {
    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    const std::vector<int> centers = kmeanspp_centers(points, k, rng);

    std::vector<int> assign(n);
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = (points.row(i) - points.row(centers[0])).squaredNorm();
        for (int c = 1; c < k; ++c) {
            const double dd = (points.row(i) - points.row(centers[c])).squaredNorm();
            if (dd < best_d) {
                best_d = dd;
                best = c;
            }
        }
        assign[i] = best;
    }

    Gmm gmm;
    gmm.weights = Eigen::VectorXd::Zero(k);
    gmm.means.assign(k, Eigen::VectorXd::Zero(d));
    gmm.covariances.assign(k, Eigen::MatrixXd::Zero(d, d));
    for (int i = 0; i < n; ++i) {
        gmm.weights[assign[i]] += 1.0;
        gmm.means[assign[i]] += points.row(i).transpose();
    }
    for (int c = 0; c < k; ++c)
        if (gmm.weights[c] > 0.0) gmm.means[c] /= gmm.weights[c];
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd delta = points.row(i).transpose() - gmm.means[assign[i]];
        gmm.covariances[assign[i]] += delta * delta.transpose();
    }
    for (int c = 0; c < k; ++c) {
        if (gmm.weights[c] > 0.0) gmm.covariances[c] /= gmm.weights[c];
        gmm.covariances[c] = floor_eigenvalues(gmm.covariances[c], Gmm::kEigenvalueFloor);
    }
    gmm.weights /= gmm.weights.sum();
    return gmm;
}

void drop_weightless_components(Gmm& gmm, int& dropped) {
    Gmm kept;
    std::vector<double> w;
    for (int c = 0; c < gmm.n_components(); ++c) {
        if (gmm.weights[c] < Gmm::kWeightFloor) {
            ++dropped;
            continue;
        }
        w.push_back(gmm.weights[c]);
        kept.means.push_back(gmm.means[c]);
        kept.covariances.push_back(gmm.covariances[c]);
    }
    if (w.empty()) throw NumericalError("fit_gmm: every component collapsed");
    kept.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    kept.weights /= kept.weights.sum();
    gmm = std::move(kept);
}

} // namespace

void Gmm::validate() const {
    const int k = n_components();
    if (k == 0) throw std::invalid_argument("Gmm: empty mixture");
    if (static_cast<int>(means.size()) != k || static_cast<int>(covariances.size()) != k)
        throw std::invalid_argument("Gmm: component count mismatch");
    if (std::abs(weights.sum() - 1.0) > 1e-9 || weights.minCoeff() < 0.0)
        throw std::invalid_argument("Gmm: weights are not a distribution");
    const int d = dim();
    for (int c = 0; c < k; ++c) {
        if (means[c].size() != d || covariances[c].rows() != d || covariances[c].cols() != d)
            throw std::invalid_argument("Gmm: inconsistent dimensions");
        if ((covariances[c] - covariances[c].transpose()).cwiseAbs().maxCoeff() > 1e-9)
            throw std::invalid_argument("Gmm: covariance " + std::to_string(c) +
                                        " is not symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariances[c]);
        if (es.eigenvalues().minCoeff() < kEigenvalueFloor - 1e-9)
            throw std::invalid_argument("Gmm: covariance " + std::to_string(c) +
                                        " has an eigenvalue below the floor");
    }
}

double Gmm::log_density(const Eigen::VectorXd& x) const {
    double best = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd terms(n_components());
    for (int c = 0; c < n_components(); ++c) {
        const ComponentCache cache = cholesky_of(covariances[c]);
        Eigen::VectorXd y = x - means[c];
        cache.llt.matrixL().solveInPlace(y);
        terms[c] = std::log(weights[c]) - 0.5 * (dim() * kLogTwoPi + cache.log_det) -
                   0.5 * y.squaredNorm();
        best = std::max(best, terms[c]);
    }
    return best + std::log((terms.array() - best).exp().sum());
}

Eigen::VectorXd Gmm::sample(Rng& rng) const {
    const int c = rng.categorical(weights);
    const ComponentCache cache = cholesky_of(covariances[c]);
    return means[c] + cache.llt.matrixL() * rng.normal_vector(dim());
}

GmmFitResult fit_gmm(const Eigen::MatrixXd& points, int k, int max_iters, double tol,
                     std::uint64_t seed, const Gmm* init) {
    const int n = static_cast<int>(points.rows());
    if (k < 1) throw std::invalid_argument("fit_gmm: k must be >= 1");
    if (n < k)
        throw std::invalid_argument("fit_gmm: fewer points (" + std::to_string(n) +
                                    ") than components (" + std::to_string(k) + ")");
    if (max_iters < 1) throw std::invalid_argument("fit_gmm: max_iters must be >= 1");

    GmmFitResult result;
    Rng rng(mix_seed(seed, 0x93b4));
    result.model = init ? *init : init_from_kmeanspp(points, k, rng);
    drop_weightless_components(result.model, result.dropped_components);

    Eigen::MatrixXd log_resp(n, result.model.n_components());
    for (int iter = 0; iter < max_iters; ++iter) {
        Gmm& gmm = result.model;
        const int kc = gmm.n_components();
        log_resp.resize(n, kc);

        // E-step
        for (int c = 0; c < kc; ++c) {
            const ComponentCache cache = cholesky_of(gmm.covariances[c]);
            log_resp.col(c) =
                component_log_density(points, gmm.means[c], cache).array() +
                std::log(gmm.weights[c]);
        }
        const Eigen::VectorXd row_max = log_resp.rowwise().maxCoeff();
        const Eigen::VectorXd log_norm =
            ((log_resp.colwise() - row_max).array().exp().rowwise().sum().log() +
             row_max.array())
                .matrix();
        result.log_likelihood.push_back(log_norm.mean());
        log_resp = (log_resp.colwise() - log_norm).array().exp();

        // M-step
        const Eigen::VectorXd resp_sum = log_resp.colwise().sum();
        Gmm next = gmm;
        next.weights = resp_sum / n;
        for (int c = 0; c < kc; ++c) {
            if (next.weights[c] < Gmm::kWeightFloor) continue; // dropped below
            next.means[c] = points.transpose() * log_resp.col(c) / resp_sum[c];
            const Eigen::MatrixXd centered = points.rowwise() - next.means[c].transpose();
            next.covariances[c] = floor_eigenvalues(
                centered.transpose() * log_resp.col(c).asDiagonal() * centered / resp_sum[c],
                Gmm::kEigenvalueFloor);
        }
        const int dropped_before = result.dropped_components;
        drop_weightless_components(next, result.dropped_components);
        gmm = std::move(next);

        const std::size_t t = result.log_likelihood.size();
        const bool converged =
            t >= 2 && result.dropped_components == dropped_before &&
            result.log_likelihood[t - 1] - result.log_likelihood[t - 2] < tol;
        if (converged) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// serialization

std::string gmm_to_json(const Gmm& gmm) {
    nlohmann::json j;
    j["weights"] = std::vector<double>(gmm.weights.begin(), gmm.weights.end());
    auto& means = j["means"] = nlohmann::json::array();
    for (const auto& m : gmm.means) means.push_back(std::vector<double>(m.begin(), m.end()));
    auto& covs = j["covariances"] = nlohmann::json::array();
    for (const auto& cov : gmm.covariances) {
        std::vector<double> flat;
        flat.reserve(cov.size());
        for (Eigen::Index r = 0; r < cov.rows(); ++r)
            for (Eigen::Index c = 0; c < cov.cols(); ++c) flat.push_back(cov(r, c));
        covs.push_back(std::move(flat));
    }
    return j.dump();
}

Gmm gmm_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Gmm gmm;
    const auto weights = j.at("weights").get<std::vector<double>>();
    gmm.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(),
                                                    static_cast<Eigen::Index>(weights.size()));
    for (const auto& m : j.at("means")) {
        const auto vals = m.get<std::vector<double>>();
        gmm.means.push_back(
            Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    const int d = gmm.dim();
    for (const auto& c : j.at("covariances")) {
        const auto flat = c.get<std::vector<double>>();
        if (static_cast<int>(flat.size()) != d * d)
            throw std::runtime_error("gmm_from_json: covariance has wrong size");
        Eigen::MatrixXd cov(d, d);
        for (int r = 0; r < d; ++r)
            for (int q = 0; q < d; ++q) cov(r, q) = flat[r * d + q];
        gmm.covariances.push_back(std::move(cov));
    }
    gmm.validate();
    return gmm;
}

void save_gmm(const Gmm& gmm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_gmm: cannot open " + path);
    out << gmm_to_json(gmm) << "\n";
}

Gmm load_gmm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_gmm: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return gmm_from_json(text);
}

} // namespace btdz
