#include "btdz/mdp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "btdz/errors.hpp"

namespace btdz {

namespace {

constexpr double kRowSumTol = 1e-12;

class Fnv1a {
public:
    void add_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void add_u64(std::uint64_t v) { add_bytes(&v, sizeof v); }
    void add_double(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        add_u64(bits);
    }
    void add_matrix(const Eigen::MatrixXd& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) add_double(m(r, c));
    }
    std::uint64_t value() const { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

void check_distribution(const Eigen::VectorXd& p, const std::string& what) {
    if (p.size() == 0) throw std::invalid_argument(what + " is empty");
    if (p.minCoeff() < 0.0) throw std::invalid_argument(what + " has negative entries");
    if (std::abs(p.sum() - 1.0) > kRowSumTol)
        throw std::invalid_argument(what + " does not sum to 1 (sum = " + std::to_string(p.sum()) + ")");
}

} // namespace

void TabularMdp::validate() const {
    if (n_states <= 0 || n_actions <= 0)
        throw std::invalid_argument("TabularMdp: n_states and n_actions must be positive");
    if (static_cast<int>(transitions.size()) != n_actions)
        throw std::invalid_argument("TabularMdp: transition tensor has wrong action count");
    for (int a = 0; a < n_actions; ++a) {
        const auto& P = transitions[a];
        if (P.rows() != n_states || P.cols() != n_states)
            throw std::invalid_argument("TabularMdp: transition matrix for action " +
                                        std::to_string(a) + " has wrong shape");
        if (P.minCoeff() < 0.0)
            throw std::invalid_argument("TabularMdp: negative transition probability (action " +
                                        std::to_string(a) + ")");
        for (int s = 0; s < n_states; ++s) {
            if (std::abs(P.row(s).sum() - 1.0) > kRowSumTol)
                throw std::invalid_argument("TabularMdp: transition row (a=" + std::to_string(a) +
                                            ", s=" + std::to_string(s) + ") does not sum to 1");
        }
    }
    if (initial_dist.size() != n_states)
        throw std::invalid_argument("TabularMdp: initial_dist has wrong length");
    check_distribution(initial_dist, "TabularMdp: initial_dist");
    if (!(discount >= 0.0 && discount < 1.0))
        throw std::invalid_argument("TabularMdp: discount must lie in [0, 1)");
}

std::uint64_t TabularMdp::fingerprint() const {
    Fnv1a h;
    h.add_u64(static_cast<std::uint64_t>(n_states));
    h.add_u64(static_cast<std::uint64_t>(n_actions));
    for (const auto& P : transitions) h.add_matrix(P);
    for (int s = 0; s < n_states; ++s) h.add_double(initial_dist[s]);
    h.add_double(discount);
    return h.value();
}

void DeterministicPolicy::validate(const TabularMdp& mdp) const {
    if (static_cast<int>(action_of.size()) != mdp.n_states)
        throw std::invalid_argument("DeterministicPolicy: wrong length for this MDP");
    for (int a : action_of)
        if (a < 0 || a >= mdp.n_actions)
            throw std::invalid_argument("DeterministicPolicy: action index out of range");
}

void StochasticPolicy::validate(const TabularMdp& mdp) const {
    if (probs.rows() != mdp.n_states || probs.cols() != mdp.n_actions)
        throw std::invalid_argument("StochasticPolicy: wrong shape for this MDP");
    if (probs.minCoeff() < 0.0) throw std::invalid_argument("StochasticPolicy: negative probability");
    for (int s = 0; s < mdp.n_states; ++s)
        if (std::abs(probs.row(s).sum() - 1.0) > kRowSumTol)
            throw std::invalid_argument("StochasticPolicy: row " + std::to_string(s) +
                                        " does not sum to 1");
}

double FeatureMap::occupancy_bound(double discount) const {
    return phi.rowwise().norm().maxCoeff() / (1.0 - discount);
}

std::uint64_t FeatureMap::fingerprint() const {
    Fnv1a h;
    h.add_u64(static_cast<std::uint64_t>(phi.rows()));
    h.add_u64(static_cast<std::uint64_t>(phi.cols()));
    h.add_matrix(phi);
    return h.value();
}

Eigen::MatrixXd policy_transition_matrix(const TabularMdp& mdp, const DeterministicPolicy& policy) {
    policy.validate(mdp);
    Eigen::MatrixXd P(mdp.n_states, mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) P.row(s) = mdp.transitions[policy.action_of[s]].row(s);
    return P;
}

Eigen::MatrixXd policy_transition_matrix(const TabularMdp& mdp, const StochasticPolicy& policy) {
    policy.validate(mdp);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
    for (int a = 0; a < mdp.n_actions; ++a)
        P += policy.probs.col(a).asDiagonal() * mdp.transitions[a];
    return P;
}

namespace {

Eigen::VectorXd occupancy_from_transition(const Eigen::MatrixXd& P_pi,
                                          const Eigen::VectorXd& mu, double gamma) {
    const int n = static_cast<int>(P_pi.rows());
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * P_pi.transpose();
    Eigen::VectorXd d = Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(mu);
    const double residual = (A * d - mu).cwiseAbs().maxCoeff();
    if (!d.allFinite() || residual > 1e-8)
        throw NumericalError("discounted_occupancy: linear solve failed (residual " +
                             std::to_string(residual) + ")");
    if (d.minCoeff() < -1e-9)
        throw NumericalError("discounted_occupancy: solve produced a negative occupancy");
    return d.cwiseMax(0.0);
}

} // namespace

Eigen::VectorXd discounted_occupancy(const TabularMdp& mdp, const DeterministicPolicy& policy) {
    return occupancy_from_transition(policy_transition_matrix(mdp, policy), mdp.initial_dist,
                                     mdp.discount);
}

Eigen::VectorXd discounted_occupancy(const TabularMdp& mdp, const StochasticPolicy& policy) {
    return occupancy_from_transition(policy_transition_matrix(mdp, policy), mdp.initial_dist,
                                     mdp.discount);
}

FeatureOccupancy feature_occupancy(const TabularMdp& mdp, const DeterministicPolicy& policy,
                                   const FeatureMap& features) {
    if (features.n_states() != mdp.n_states)
        throw std::invalid_argument("feature_occupancy: feature map does not match MDP");
    return FeatureOccupancy{features.phi.transpose() * discounted_occupancy(mdp, policy)};
}

double expected_return(const FeatureOccupancy& psi, const Eigen::VectorXd& z) {
    if (psi.psi.size() != z.size())
        throw std::invalid_argument("expected_return: dimension mismatch");
    return psi.psi.dot(z);
}

double evaluate_policy_return(const TabularMdp& mdp, const DeterministicPolicy& policy,
                              const Eigen::VectorXd& reward) {
    if (reward.size() != mdp.n_states)
        throw std::invalid_argument("evaluate_policy_return: reward has wrong length");
    return reward.dot(discounted_occupancy(mdp, policy));
}

ValueIterationResult value_iteration(const TabularMdp& mdp, const Eigen::VectorXd& reward,
                                     double tol) {
    mdp.validate();
    if (reward.size() != mdp.n_states)
        throw std::invalid_argument("value_iteration: reward has wrong length");
    if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");

    const int n = mdp.n_states;
    const double gamma = mdp.discount;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd best(n);
    int iters = 0;

    if (gamma > 0.0) {
        while (true) {
            best = mdp.transitions[0] * v;
            for (int a = 1; a < mdp.n_actions; ++a)
                best = best.cwiseMax((mdp.transitions[a] * v).eval());
            Eigen::VectorXd v_next = reward + gamma * best;
            const double residual = (v_next - v).cwiseAbs().maxCoeff();
            v = std::move(v_next);
            ++iters;
            if (residual <= tol) break;
        }
    } else {
        v = reward;
        iters = 1;
    }

    // greedy extraction on Q(s,a) = R(s) + gamma * (P_a v)(s); the reward term
    // is constant across actions, so only the discounted continuation matters.
    // Ties go to the lowest action index.
    DeterministicPolicy policy;
    policy.action_of.assign(n, 0);
    Eigen::MatrixXd continuation(n, mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a) continuation.col(a) = gamma * (mdp.transitions[a] * v);
    for (int s = 0; s < n; ++s) {
        int arg = 0;
        double top = continuation(s, 0);
        for (int a = 1; a < mdp.n_actions; ++a) {
            if (continuation(s, a) > top) {
                top = continuation(s, a);
                arg = a;
            }
        }
        policy.action_of[s] = arg;
    }
    return ValueIterationResult{std::move(policy), std::move(v), iters};
}

SuccessorFeatureTable successor_features_for_policy(const TabularMdp& mdp,
                                                    const DeterministicPolicy& policy,
                                                    const FeatureMap& features) {
    policy.validate(mdp);
    if (features.n_states() != mdp.n_states)
        throw std::invalid_argument("successor_features_for_policy: feature map does not match MDP");

    const int n = mdp.n_states;
    const double gamma = mdp.discount;
    const Eigen::MatrixXd P_pi = policy_transition_matrix(mdp, policy);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * P_pi;
    // on-policy block: U.row(s) = psi(s, pi(s)); one factorization, d right-hand sides
    Eigen::MatrixXd U = Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(features.phi);
    if (!U.allFinite())
        throw NumericalError("successor_features_for_policy: linear solve failed");

    SuccessorFeatureTable table;
    table.psi.reserve(mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a)
        table.psi.push_back(features.phi + gamma * (mdp.transitions[a] * U));
    return table;
}

StochasticPolicy uniform_random_policy(const TabularMdp& mdp) {
    StochasticPolicy beta;
    beta.probs = Eigen::MatrixXd::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
    return beta;
}

// ---------------------------------------------------------------------------
// serialization

std::string mdp_to_json(const TabularMdp& mdp) {
    nlohmann::json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    auto& trans = j["transitions"] = nlohmann::json::array();
    for (const auto& P : mdp.transitions) {
        nlohmann::json rows = nlohmann::json::array();
        for (int s = 0; s < mdp.n_states; ++s) {
            nlohmann::json row = nlohmann::json::array();
            for (int t = 0; t < mdp.n_states; ++t) row.push_back(P(s, t));
            rows.push_back(std::move(row));
        }
        trans.push_back(std::move(rows));
    }
    j["initial_dist"] = std::vector<double>(mdp.initial_dist.begin(), mdp.initial_dist.end());
    j["discount"] = mdp.discount;
    return j.dump();
}

TabularMdp mdp_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TabularMdp mdp;
    mdp.n_states = j.at("n_states").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.discount = j.at("discount").get<double>();
    const auto& trans = j.at("transitions");
    if (static_cast<int>(trans.size()) != mdp.n_actions)
        throw std::invalid_argument("mdp_from_json: transition tensor has wrong action count");
    mdp.transitions.resize(mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a) {
        mdp.transitions[a].resize(mdp.n_states, mdp.n_states);
        const auto& rows = trans.at(a);
        for (int s = 0; s < mdp.n_states; ++s) {
            const auto& row = rows.at(s);
            for (int t = 0; t < mdp.n_states; ++t)
                mdp.transitions[a](s, t) = row.at(t).get<double>();
        }
    }
    const auto& mu = j.at("initial_dist");
    mdp.initial_dist.resize(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) mdp.initial_dist[s] = mu.at(s).get<double>();
    mdp.validate();
    return mdp;
}

void save_mdp(const TabularMdp& mdp, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_mdp: cannot open " + path);
    out << mdp_to_json(mdp) << "\n";
}

TabularMdp load_mdp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_mdp: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return mdp_from_json(text);
}

namespace {
constexpr char kFeatureMagic[8] = {'B', 'T', 'D', 'Z', 'F', 'M', 'A', 'P'};
}

void save_features(const FeatureMap& features, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_features: cannot open " + path);
    out.write(kFeatureMagic, sizeof kFeatureMagic);
    const std::uint64_t rows = features.phi.rows(), cols = features.phi.cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    for (Eigen::Index r = 0; r < features.phi.rows(); ++r)
        for (Eigen::Index c = 0; c < features.phi.cols(); ++c) {
            const double v = features.phi(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
}

FeatureMap load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_features: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0)
        throw std::runtime_error("load_features: bad header in " + path);
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof rows);
    in.read(reinterpret_cast<char*>(&cols), sizeof cols);
    FeatureMap f;
    f.phi.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::uint64_t r = 0; r < rows; ++r)
        for (std::uint64_t c = 0; c < cols; ++c) {
            double v;
            in.read(reinterpret_cast<char*>(&v), sizeof v);
            f.phi(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    if (!in) throw std::runtime_error("load_features: truncated file " + path);
    return f;
}

} // namespace btdz
