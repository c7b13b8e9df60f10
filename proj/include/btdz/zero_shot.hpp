#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "btdz/mdp.hpp"
#include "btdz/tasks.hpp"

namespace btdz {

/// One trained task: the training vector, its value-iteration-optimal policy,
/// and that policy's exact successor-feature table.
struct LibraryEntry {
    Eigen::VectorXd z_train;
    DeterministicPolicy policy;
    SuccessorFeatureTable sf_table;
};

/// Carrier of the task-conditioned behavior family: generalized policy
/// improvement maximizes over these entries at test time.
struct PolicyLibrary {
    std::vector<LibraryEntry> entries;
    std::uint64_t features_fingerprint = 0;
    std::uint64_t mdp_fingerprint = 0;

    int size() const { return static_cast<int>(entries.size()); }
    int dim() const { return entries.empty() ? 0 : static_cast<int>(entries[0].z_train.size()); }
};

/// Revealed rewards at a set of states: the test-time task evidence.
struct RewardProbe {
    std::vector<std::pair<int, double>> labeled_states;
};

/// Trains one entry per task: reward phi * z, exact value iteration, exact
/// successor features. Verifies at build time that the on-policy successor
/// features reproduce the optimal Q-values within 1e-6.
PolicyLibrary train_policy_library(const TabularMdp& mdp, const FeatureMap& features,
                                   const TaskVectorSet& tasks, double tol, int jobs = 1);

struct InferredTask {
    Eigen::VectorXd raw;  // ridge regression solution; what GPI consumes
    Eigen::VectorXd unit; // normalized copy for diagnostics (zero when raw ~ 0)
};

/// Least-squares task inference from labeled states:
/// (sum phi phi^T / N + ridge I) z = sum phi r / N.
InferredTask infer_task_vector(const RewardProbe& probe, const FeatureMap& features, double ridge);

/// Generalized policy improvement: pi(s) = argmax_a max_i psi_i(s,a)^T z.
/// Ties break toward the lowest action index, then the lowest library index.
DeterministicPolicy gpi_policy(const PolicyLibrary& library, const Eigen::VectorXd& z_test);

/// Exact optimal return for a reward: value iteration, then exact evaluation
/// of the greedy policy.
double oracle_return(const TabularMdp& mdp, const Eigen::VectorXd& true_reward, double tol);

enum class ProbeMode {
    with_replacement, // probe_size uniform draws, states may repeat
    exhaustive        // every state exactly once
};

struct EvalResult {
    double ret = 0.0;
    double oracle = 0.0;
    double ratio = 0.0;
    /// GPI improvement margin on the *inferred* reward phi * z_raw: the GPI
    /// policy's return minus the best single library entry's return. The GPI
    /// guarantee makes this nonnegative up to solver noise.
    double gpi_margin = 0.0;
    /// oracle - ret; nonnegative up to solver noise.
    double oracle_margin = 0.0;
    double z_raw_norm = 0.0;
};

/// Full zero-shot pipeline on one test reward: probe -> inference -> GPI ->
/// exact evaluation against the exact oracle.
EvalResult zero_shot_eval(const TabularMdp& mdp, const PolicyLibrary& library,
                          const FeatureMap& features, const Eigen::VectorXd& true_reward,
                          int probe_size, double ridge, std::uint64_t seed,
                          ProbeMode mode = ProbeMode::with_replacement, double vi_tol = 1e-10);

void save_library(const PolicyLibrary& library, const std::string& path);
PolicyLibrary load_library(const std::string& path);

} // namespace btdz
