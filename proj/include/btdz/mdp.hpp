#pragma once

#include <cstdint>
#include <string>
#include <vector>
#include <Eigen/Dense>

namespace btdz {

/// Finite MDP with a stochastic transition tensor indexed (action, state, next
/// state), an initial state distribution and a discount in [0, 1).
///
/// Invariants are checked by validate(): every transition row sums to 1 within
/// 1e-12 with no negative entries, the initial distribution likewise, and the
/// discount is strictly below 1.
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<Eigen::MatrixXd> transitions; // [action](state, next_state)
    Eigen::VectorXd initial_dist;
    double discount = 0.0;

    void validate() const; // throws std::invalid_argument on violation

    /// Stable 64-bit hash of the full MDP contents, used to pair datasets and
    /// policy libraries with the MDP that produced them.
    std::uint64_t fingerprint() const;
};

/// One action per state.
struct DeterministicPolicy {
    std::vector<int> action_of;

    void validate(const TabularMdp& mdp) const;
};

/// Row-stochastic (state x action) action distribution.
struct StochasticPolicy {
    Eigen::MatrixXd probs;

    void validate(const TabularMdp& mdp) const;
};

/// State embeddings: row s is phi(s) in R^d.
struct FeatureMap {
    Eigen::MatrixXd phi; // (n_states, d)

    int dim() const { return static_cast<int>(phi.cols()); }
    int n_states() const { return static_cast<int>(phi.rows()); }

    /// Upper bound on any feature occupancy norm: max_s ||phi(s)|| / (1 - gamma).
    double occupancy_bound(double discount) const;

    std::uint64_t fingerprint() const;
};

/// Discounted feature expectation of one policy from the initial distribution.
struct FeatureOccupancy {
    Eigen::VectorXd psi;
};

/// Per-(state, action) successor features for a fixed policy: psi[a].row(s) is
/// the exact discounted feature expectation starting from (s, a).
struct SuccessorFeatureTable {
    std::vector<Eigen::MatrixXd> psi; // [action](state, d)

    int dim() const { return psi.empty() ? 0 : static_cast<int>(psi[0].cols()); }
};

/// Row s of the result is the transition distribution under policy.action_of[s].
Eigen::MatrixXd policy_transition_matrix(const TabularMdp& mdp, const DeterministicPolicy& policy);

/// Same, for a stochastic policy: rows are action-probability mixtures of the
/// per-action transition rows.
Eigen::MatrixXd policy_transition_matrix(const TabularMdp& mdp, const StochasticPolicy& policy);

/// Solves d = mu + gamma * P_pi^T d exactly. Entries are nonnegative and sum
/// to 1 / (1 - gamma).
Eigen::VectorXd discounted_occupancy(const TabularMdp& mdp, const DeterministicPolicy& policy);
Eigen::VectorXd discounted_occupancy(const TabularMdp& mdp, const StochasticPolicy& policy);

/// phi^T applied to the discounted occupancy of the policy.
FeatureOccupancy feature_occupancy(const TabularMdp& mdp, const DeterministicPolicy& policy,
                                   const FeatureMap& features);

/// Inner product psi . z; equals the exact discounted return of the policy
/// behind psi under the reward phi(s)^T z.
double expected_return(const FeatureOccupancy& psi, const Eigen::VectorXd& z);

/// Exact discounted return of a policy under a state reward received at the
/// current state: reward^T occupancy.
double evaluate_policy_return(const TabularMdp& mdp, const DeterministicPolicy& policy,
                              const Eigen::VectorXd& reward);

struct ValueIterationResult {
    DeterministicPolicy policy;
    Eigen::VectorXd values;
    int iterations = 0;
};

/// Synchronous value iteration on a state reward R(s).
///
/// Runs Bellman backups V <- R + gamma * max_a P_a V until the sup-norm
/// residual is at most tol, then extracts the greedy policy with ties broken
/// toward the lowest action index. With gamma = 0 all actions tie and the
/// policy is action 0 everywhere.
ValueIterationResult value_iteration(const TabularMdp& mdp, const Eigen::VectorXd& reward,
                                     double tol);

/// Exact successor features of a fixed policy, solved as d linear systems:
/// psi[a].row(s) = phi(s) + gamma * sum_s' P(s'|s,a) psi[pi(s')].row(s').
SuccessorFeatureTable successor_features_for_policy(const TabularMdp& mdp,
                                                    const DeterministicPolicy& policy,
                                                    const FeatureMap& features);

/// Stochastic policy assigning equal probability to every action in every state.
StochasticPolicy uniform_random_policy(const TabularMdp& mdp);

/// JSON round-trip for the MDP. The document carries n_states, n_actions,
/// transitions (action-major nested arrays), initial_dist and discount.
std::string mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const std::string& text);
void save_mdp(const TabularMdp& mdp, const std::string& path);
TabularMdp load_mdp(const std::string& path);

/// Binary round-trip for feature matrices (row-major doubles after a small
/// header).
void save_features(const FeatureMap& features, const std::string& path);
FeatureMap load_features(const std::string& path);

} // namespace btdz
