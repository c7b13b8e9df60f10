#include "btdz/zero_shot.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "btdz/errors.hpp"
#include "btdz/parallel.hpp"
#include "btdz/rng.hpp"

namespace btdz {

PolicyLibrary train_policy_library(const TabularMdp& mdp, const FeatureMap& features,
                                   const TaskVectorSet& tasks, double tol, int jobs) {
    if (tasks.size() == 0) throw std::invalid_argument("train_policy_library: no tasks");
    if (features.n_states() != mdp.n_states)
        throw std::invalid_argument("train_policy_library: feature map does not match MDP");
    if (tasks.dim() != features.dim())
        throw std::invalid_argument("train_policy_library: task dimension does not match features");

    PolicyLibrary library;
    library.entries.resize(tasks.size());
    library.features_fingerprint = features.fingerprint();
    library.mdp_fingerprint = mdp.fingerprint();

    parallel_for(tasks.size(), jobs, [&](int i) {
        LibraryEntry entry;
        entry.z_train = tasks.vectors.row(i).transpose();
        const Eigen::VectorXd reward = features.phi * entry.z_train;
        const ValueIterationResult vi = value_iteration(mdp, reward, tol);
        entry.policy = vi.policy;
        entry.sf_table = successor_features_for_policy(mdp, entry.policy, features);

        // on-policy successor features must reproduce the optimal Q-values
        double worst = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            const int a = entry.policy.action_of[s];
            const double q_from_sf = entry.sf_table.psi[a].row(s).dot(entry.z_train);
            const double q_from_vi =
                reward[s] + mdp.discount * mdp.transitions[a].row(s).dot(vi.values);
            worst = std::max(worst, std::abs(q_from_sf - q_from_vi));
        }
        if (worst > 1e-6)
            throw NumericalError(
                "train_policy_library: successor features disagree with value iteration by " +
                std::to_string(worst));
        library.entries[i] = std::move(entry);
    });
    return library;
}

InferredTask infer_task_vector(const RewardProbe& probe, const FeatureMap& features, double ridge) {
    if (probe.labeled_states.empty())
        throw std::invalid_argument("infer_task_vector: probe is empty");
    if (ridge < 0.0) throw std::invalid_argument("infer_task_vector: ridge must be >= 0");
    const int d = features.dim();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd target = Eigen::VectorXd::Zero(d);
    for (const auto& [s, r] : probe.labeled_states) {
        if (s < 0 || s >= features.n_states())
            throw std::invalid_argument("infer_task_vector: probe state out of range");
        const Eigen::VectorXd phi = features.phi.row(s).transpose();
        gram.noalias() += phi * phi.transpose();
        target.noalias() += r * phi;
    }
    const double inv_n = 1.0 / static_cast<double>(probe.labeled_states.size());
    gram *= inv_n;
    target *= inv_n;
    gram.diagonal().array() += ridge;

    Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    InferredTask out;
    out.raw = solver.solve(target);
    const double residual = (gram * out.raw - target).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, target.cwiseAbs().maxCoeff());
    if (solver.info() != Eigen::Success || !out.raw.allFinite() || residual > 1e-8 * scale)
        throw NumericalError(
            "infer_task_vector: probe Gram matrix is singular; use a positive ridge");
    const double norm = out.raw.norm();
    out.unit = norm > 1e-12 ? Eigen::VectorXd(out.raw / norm)
                            : Eigen::VectorXd(Eigen::VectorXd::Zero(d));
    return out;
}

DeterministicPolicy gpi_policy(const PolicyLibrary& library, const Eigen::VectorXd& z_test) {
    if (library.entries.empty()) throw std::invalid_argument("gpi_policy: empty library");
    if (library.dim() != z_test.size())
        throw std::invalid_argument("gpi_policy: task dimension does not match library");
    const int n = static_cast<int>(library.entries[0].sf_table.psi[0].rows());
    const int n_actions = static_cast<int>(library.entries[0].sf_table.psi.size());

    Eigen::MatrixXd scores =
        Eigen::MatrixXd::Constant(n, n_actions, -std::numeric_limits<double>::infinity());
    for (const auto& entry : library.entries)
        for (int a = 0; a < n_actions; ++a)
            scores.col(a) = scores.col(a).cwiseMax((entry.sf_table.psi[a] * z_test).eval());

    DeterministicPolicy policy;
    policy.action_of.assign(n, 0);
    for (int s = 0; s < n; ++s) {
        int arg = 0;
        double best = scores(s, 0);
        for (int a = 1; a < n_actions; ++a)
            if (scores(s, a) > best) {
                best = scores(s, a);
                arg = a;
            }
        policy.action_of[s] = arg;
    }
    return policy;
}

double oracle_return(const TabularMdp& mdp, const Eigen::VectorXd& true_reward, double tol) {
    const ValueIterationResult vi = value_iteration(mdp, true_reward, tol);
    return evaluate_policy_return(mdp, vi.policy, true_reward);
}

EvalResult zero_shot_eval(const TabularMdp& mdp, const PolicyLibrary& library,
                          const FeatureMap& features, const Eigen::VectorXd& true_reward,
                          int probe_size, double ridge, std::uint64_t seed, ProbeMode mode,
                          double vi_tol) {
    if (probe_size < 1) throw std::invalid_argument("zero_shot_eval: probe_size must be >= 1");
    if (true_reward.size() != mdp.n_states)
        throw std::invalid_argument("zero_shot_eval: reward has wrong length");

    RewardProbe probe;
    if (mode == ProbeMode::exhaustive) {
        probe.labeled_states.reserve(mdp.n_states);
        for (int s = 0; s < mdp.n_states; ++s) probe.labeled_states.emplace_back(s, true_reward[s]);
    } else {
        Rng rng(mix_seed(seed, 0xb0be));
        probe.labeled_states.reserve(probe_size);
        for (int i = 0; i < probe_size; ++i) {
            const int s = rng.uniform_int(mdp.n_states);
            probe.labeled_states.emplace_back(s, true_reward[s]);
        }
    }

    const InferredTask inferred = infer_task_vector(probe, features, ridge);
    const DeterministicPolicy policy = gpi_policy(library, inferred.raw);

    EvalResult result;
    result.z_raw_norm = inferred.raw.norm();
    result.ret = evaluate_policy_return(mdp, policy, true_reward);
    result.oracle = oracle_return(mdp, true_reward, vi_tol);
    result.ratio = result.oracle != 0.0 ? result.ret / result.oracle
                                        : std::numeric_limits<double>::quiet_NaN();
    result.oracle_margin = result.oracle - result.ret;

    // GPI improvement margin is measured on the reward the GPI policy was
    // built for, i.e. the inferred one.
    const Eigen::VectorXd inferred_reward = features.phi * inferred.raw;
    const double gpi_ret = evaluate_policy_return(mdp, policy, inferred_reward);
    double best_entry = -std::numeric_limits<double>::infinity();
    for (const auto& entry : library.entries)
        best_entry = std::max(best_entry, evaluate_policy_return(mdp, entry.policy, inferred_reward));
    result.gpi_margin = gpi_ret - best_entry;
    return result;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

constexpr char kLibraryMagic[8] = {'B', 'T', 'D', 'Z', 'P', 'L', 'I', 'B'};

void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

void write_doubles(std::ofstream& out, const double* p, std::size_t n) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* p, std::size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

} // namespace

void save_library(const PolicyLibrary& library, const std::string& path) {
    if (library.entries.empty()) throw std::invalid_argument("save_library: empty library");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_library: cannot open " + path);
    const auto& first = library.entries[0];
    const std::uint64_t n_states = first.sf_table.psi[0].rows();
    const std::uint64_t n_actions = first.sf_table.psi.size();
    const std::uint64_t d = first.z_train.size();

    out.write(kLibraryMagic, sizeof kLibraryMagic);
    write_u64(out, library.entries.size());
    write_u64(out, n_states);
    write_u64(out, n_actions);
    write_u64(out, d);
    write_u64(out, library.mdp_fingerprint);
    write_u64(out, library.features_fingerprint);
    for (const auto& entry : library.entries) {
        write_doubles(out, entry.z_train.data(), d);
        for (int a : entry.policy.action_of) {
            const std::int32_t v = a;
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
        for (const auto& psi : entry.sf_table.psi)
            for (Eigen::Index r = 0; r < psi.rows(); ++r)
                for (Eigen::Index c = 0; c < psi.cols(); ++c) {
                    const double v = psi(r, c);
                    write_doubles(out, &v, 1);
                }
    }
}

PolicyLibrary load_library(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_library: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kLibraryMagic, sizeof magic) != 0)
        throw std::runtime_error("load_library: bad header in " + path);
    const std::uint64_t n_entries = read_u64(in);
    const std::uint64_t n_states = read_u64(in);
    const std::uint64_t n_actions = read_u64(in);
    const std::uint64_t d = read_u64(in);

    PolicyLibrary library;
    library.mdp_fingerprint = read_u64(in);
    library.features_fingerprint = read_u64(in);
    library.entries.resize(n_entries);
    for (auto& entry : library.entries) {
        entry.z_train.resize(static_cast<Eigen::Index>(d));
        read_doubles(in, entry.z_train.data(), d);
        entry.policy.action_of.resize(n_states);
        for (auto& a : entry.policy.action_of) {
            std::int32_t v = 0;
            in.read(reinterpret_cast<char*>(&v), sizeof v);
            a = v;
        }
        entry.sf_table.psi.resize(n_actions);
        for (auto& psi : entry.sf_table.psi) {
            psi.resize(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(d));
            for (Eigen::Index r = 0; r < psi.rows(); ++r)
                for (Eigen::Index c = 0; c < psi.cols(); ++c) read_doubles(in, &psi(r, c), 1);
        }
    }
    if (!in) throw std::runtime_error("load_library: truncated file " + path);
    return library;
}

} // namespace btdz
