#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "btdz/mdp.hpp"

namespace btdz {

/// One rollout: L transitions, L + 1 states.
struct Trajectory {
    std::vector<int> states;
    std::vector<int> actions;

    int n_transitions() const { return static_cast<int>(actions.size()); }
    int n_states() const { return static_cast<int>(states.size()); }
};

/// How trajectories are generated. `mix` alternates (per trajectory, with
/// equal probability) between a uniform-random policy and an epsilon-greedy
/// goal-seeker whose goal state is drawn uniformly; this stands in for a
/// broad-coverage exploration dataset.
struct BehaviorSpec {
    enum class Kind { uniform_random, mix };
    Kind kind = Kind::mix;
    double epsilon = 0.2;

    void validate() const;
    std::string name() const;
};

struct Dataset {
    std::vector<Trajectory> trajectories;
    std::uint64_t mdp_fingerprint = 0;
    BehaviorSpec behavior;
    std::uint64_t seed = 0;
    int n_states = 0;
    int n_actions = 0;

    int size() const { return static_cast<int>(trajectories.size()); }
};

/// Contiguous slice of a parent trajectory. `length` counts states, so a
/// singleton slice has length 1.
struct Subtrajectory {
    int parent = 0;
    int start = 0;
    int length = 0;
    std::vector<int> states;
};

/// Rolls out n_traj trajectories of traj_len transitions each. Trajectory i
/// is driven entirely by the substream mix_seed(seed, i), so the result is
/// byte-identical for any worker count.
Dataset generate_dataset(const TabularMdp& mdp, int n_traj, int traj_len,
                         const BehaviorSpec& behavior, std::uint64_t seed, int jobs = 1);

struct EmpiricalTransitions {
    Eigen::MatrixXd matrix;
    std::vector<int> rows_defaulted; // states never visited; their rows are uniform
};

/// Row-normalized count matrix of observed state -> next-state transitions.
EmpiricalTransitions empirical_transition_matrix(const Dataset& dataset, int n_states);

/// Draws n_sub slices: parent uniform, length uniform on
/// [len_min, min(len_max, parent states)], start uniform over valid offsets.
/// Deterministic per seed. Throws std::invalid_argument when len_max exceeds
/// every trajectory's state count.
std::vector<Subtrajectory> sample_subtrajectories(const Dataset& dataset, int n_sub, int len_min,
                                                  int len_max, std::uint64_t seed);

/// JSON-lines persistence: a metadata header line, then one trajectory per line.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string dataset_to_jsonl(const Dataset& dataset);
Dataset dataset_from_jsonl(const std::string& text);

} // namespace btdz
