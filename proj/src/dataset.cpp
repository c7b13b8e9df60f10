#include "btdz/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "btdz/parallel.hpp"
#include "btdz/rng.hpp"

namespace btdz {

namespace {

constexpr double kGoalSeekerTol = 1e-6;

int sample_row(const Eigen::MatrixXd& matrix, int row, Rng& rng) {
    double u = rng.uniform();
    const int n = static_cast<int>(matrix.cols());
    for (int j = 0; j < n; ++j) {
        u -= matrix(row, j);
        if (u < 0.0) return j;
    }
    return n - 1;
}

int sample_dist(const Eigen::VectorXd& p, Rng& rng) {
    double u = rng.uniform();
    for (int j = 0; j < p.size(); ++j) {
        u -= p[j];
        if (u < 0.0) return j;
    }
    return static_cast<int>(p.size()) - 1;
}

} // namespace

void BehaviorSpec::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
        throw std::invalid_argument("BehaviorSpec: epsilon must lie in [0, 1]");
}

std::string BehaviorSpec::name() const {
    return kind == Kind::uniform_random ? "uniform_random" : "mix";
}

Dataset generate_dataset(const TabularMdp& mdp, int n_traj, int traj_len,
                         const BehaviorSpec& behavior, std::uint64_t seed, int jobs) {
    mdp.validate();
    behavior.validate();
    if (n_traj < 1 || traj_len < 1)
        throw std::invalid_argument("generate_dataset: n_traj and traj_len must be >= 1");

    // Goal-seeker policies depend only on the MDP, so they are computed up
    // front and shared read-only by all workers.
    std::vector<DeterministicPolicy> goal_policy;
    if (behavior.kind == BehaviorSpec::Kind::mix) {
        goal_policy.resize(mdp.n_states);
        for (int g = 0; g < mdp.n_states; ++g) {
            Eigen::VectorXd reward = Eigen::VectorXd::Zero(mdp.n_states);
            reward[g] = 1.0;
            goal_policy[g] = value_iteration(mdp, reward, kGoalSeekerTol).policy;
        }
    }

    Dataset dataset;
    dataset.trajectories.resize(n_traj);
    dataset.mdp_fingerprint = mdp.fingerprint();
    dataset.behavior = behavior;
    dataset.seed = seed;
    dataset.n_states = mdp.n_states;
    dataset.n_actions = mdp.n_actions;

    parallel_for(n_traj, jobs, [&](int i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        const bool seek_goal =
            behavior.kind == BehaviorSpec::Kind::mix && rng.uniform() < 0.5;
        const int goal = seek_goal ? rng.uniform_int(mdp.n_states) : -1;

        Trajectory traj;
        traj.states.reserve(traj_len + 1);
        traj.actions.reserve(traj_len);
        int s = sample_dist(mdp.initial_dist, rng);
        traj.states.push_back(s);
        for (int t = 0; t < traj_len; ++t) {
            int a;
            if (seek_goal && rng.uniform() >= behavior.epsilon)
                a = goal_policy[goal].action_of[s];
            else
                a = rng.uniform_int(mdp.n_actions);
            s = sample_row(mdp.transitions[a], s, rng);
            traj.actions.push_back(a);
            traj.states.push_back(s);
        }
        dataset.trajectories[i] = std::move(traj);
    });
    return dataset;
}

EmpiricalTransitions empirical_transition_matrix(const Dataset& dataset, int n_states) {
    if (dataset.trajectories.empty())
        throw std::invalid_argument("empirical_transition_matrix: dataset is empty");
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_states);
    for (const auto& traj : dataset.trajectories)
        for (int t = 0; t + 1 < traj.n_states(); ++t)
            counts(traj.states[t], traj.states[t + 1]) += 1.0;

    EmpiricalTransitions out;
    out.matrix.resize(n_states, n_states);
    for (int s = 0; s < n_states; ++s) {
        const double total = counts.row(s).sum();
        if (total > 0.0) {
            out.matrix.row(s) = counts.row(s) / total;
        } else {
            out.matrix.row(s).setConstant(1.0 / n_states);
            out.rows_defaulted.push_back(s);
        }
    }
    return out;
}

std::vector<Subtrajectory> sample_subtrajectories(const Dataset& dataset, int n_sub, int len_min,
                                                  int len_max, std::uint64_t seed) {
    if (dataset.trajectories.empty())
        throw std::invalid_argument("sample_subtrajectories: dataset is empty");
    if (n_sub < 1) throw std::invalid_argument("sample_subtrajectories: n_sub must be >= 1");
    if (len_min < 1 || len_min > len_max)
        throw std::invalid_argument("sample_subtrajectories: need 1 <= len_min <= len_max");
    int longest = 0;
    for (const auto& traj : dataset.trajectories) longest = std::max(longest, traj.n_states());
    if (len_max > longest)
        throw std::invalid_argument("sample_subtrajectories: len_max (" + std::to_string(len_max) +
                                    " states) exceeds every trajectory length");

    std::vector<Subtrajectory> out(n_sub);
    for (int i = 0; i < n_sub; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        const int parent = rng.uniform_int(dataset.size());
        const auto& traj = dataset.trajectories[parent];
        const int hi = std::min(len_max, traj.n_states());
        const int lo = std::min(len_min, hi);
        const int length = lo + rng.uniform_int(hi - lo + 1);
        const int start = rng.uniform_int(traj.n_states() - length + 1);
        Subtrajectory sub;
        sub.parent = parent;
        sub.start = start;
        sub.length = length;
        sub.states.assign(traj.states.begin() + start, traj.states.begin() + start + length);
        out[i] = std::move(sub);
    }
    return out;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

std::string fingerprint_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t fingerprint_from_hex(const std::string& s) {
    return std::stoull(s, nullptr, 16);
}

} // namespace

std::string dataset_to_jsonl(const Dataset& dataset) {
    nlohmann::json header;
    header["format"] = "btdz-dataset";
    header["version"] = 1;
    header["n_states"] = dataset.n_states;
    header["n_actions"] = dataset.n_actions;
    header["n_traj"] = dataset.size();
    header["mdp_fingerprint"] = fingerprint_hex(dataset.mdp_fingerprint);
    header["behavior"] = {{"kind", dataset.behavior.name()}, {"epsilon", dataset.behavior.epsilon}};
    header["seed"] = dataset.seed;

    std::ostringstream out;
    out << header.dump() << "\n";
    for (const auto& traj : dataset.trajectories) {
        nlohmann::json line;
        line["states"] = traj.states;
        line["actions"] = traj.actions;
        out << line.dump() << "\n";
    }
    return out.str();
}

Dataset dataset_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("dataset_from_jsonl: empty input");
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("format", "") != "btdz-dataset")
        throw std::runtime_error("dataset_from_jsonl: not a btdz dataset");

    Dataset dataset;
    dataset.n_states = header.at("n_states").get<int>();
    dataset.n_actions = header.at("n_actions").get<int>();
    dataset.mdp_fingerprint = fingerprint_from_hex(header.at("mdp_fingerprint").get<std::string>());
    dataset.seed = header.at("seed").get<std::uint64_t>();
    const auto& behavior = header.at("behavior");
    dataset.behavior.kind = behavior.at("kind").get<std::string>() == "uniform_random"
                                ? BehaviorSpec::Kind::uniform_random
                                : BehaviorSpec::Kind::mix;
    dataset.behavior.epsilon = behavior.at("epsilon").get<double>();

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Trajectory traj;
        traj.states = j.at("states").get<std::vector<int>>();
        traj.actions = j.at("actions").get<std::vector<int>>();
        if (traj.states.size() != traj.actions.size() + 1 || traj.states.empty())
            throw std::runtime_error("dataset_from_jsonl: malformed trajectory line");
        dataset.trajectories.push_back(std::move(traj));
    }
    if (dataset.trajectories.empty())
        throw std::runtime_error("dataset_from_jsonl: dataset has no trajectories");
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    out << dataset_to_jsonl(dataset);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return dataset_from_jsonl(text);
}

} // namespace btdz
