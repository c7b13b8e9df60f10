#include "btdz/tasks.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "btdz/errors.hpp"
#include "btdz/rng.hpp"

namespace btdz {

namespace {

constexpr double kRejectionNorm = 1e-10;

// Stream tags keeping the samplers' substreams disjoint. The payload tag is
// shared by design: sample i of every sampler draws from mix_seed(seed, i) so
// the mixed sampler reproduces either endpoint exactly.
constexpr std::uint64_t kSelectStream = 0x5e1ec7;
constexpr std::uint64_t kPoolStream = 0x900b;
constexpr std::uint64_t kDrawStream = 0xd7a3;

Eigen::VectorXd uniform_sphere_draw(int d, Rng& rng) {
    while (true) {
        Eigen::VectorXd v = rng.normal_vector(d);
        const double norm = v.norm();
        if (norm > kRejectionNorm) return v / norm;
    }
}

Eigen::VectorXd btd_draw(const Gmm& gmm, Rng& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Eigen::VectorXd v = gmm.sample(rng);
        const double norm = v.norm();
        if (norm > 1e-12) return v / norm;
    }
    throw NumericalError("sample_btd: mixture keeps producing zero-norm draws");
}

} // namespace

std::string provenance_name(TaskProvenance p) {
    switch (p) {
        case TaskProvenance::subtrajectory: return "subtrajectory";
        case TaskProvenance::full_trajectory: return "full_trajectory";
        case TaskProvenance::uniform: return "uniform";
        case TaskProvenance::gmm: return "gmm";
        case TaskProvenance::mixed: return "mixed";
    }
    return "?";
}

void TaskVectorSet::validate() const {
    for (int i = 0; i < size(); ++i)
        if (std::abs(vectors.row(i).norm() - 1.0) > 1e-9)
            throw std::invalid_argument("TaskVectorSet: row " + std::to_string(i) +
                                        " is not unit norm");
}

std::optional<TaskVector> extract_task_vector(const Subtrajectory& sub, const FeatureMap& features,
                                              double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw std::invalid_argument("extract_task_vector: gamma must lie in [0, 1)");
    if (sub.states.empty()) throw std::invalid_argument("extract_task_vector: empty subtrajectory");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(features.dim());
    double scale = 1.0;
    for (int s : sub.states) {
        if (s < 0 || s >= features.n_states())
            throw std::invalid_argument("extract_task_vector: state index out of range");
        sum += scale * features.phi.row(s).transpose();
        scale *= gamma;
    }
    const double norm = sum.norm();
    if (norm < kRejectionNorm) return std::nullopt;
    return TaskVector{sum / norm};
}

PdataResult build_pdata(const Dataset& dataset, const FeatureMap& features, double gamma,
                        int n_sub, int len_min, int len_max, std::uint64_t seed) {
    const auto subs = sample_subtrajectories(dataset, n_sub, len_min, len_max, seed);
    PdataResult out;
    out.set.provenance = TaskProvenance::subtrajectory;
    out.set.vectors.resize(n_sub, features.dim());
    int kept = 0;
    for (const auto& sub : subs) {
        if (auto z = extract_task_vector(sub, features, gamma))
            out.set.vectors.row(kept++) = z->z.transpose();
        else
            ++out.rejections;
    }
    if (kept == 0)
        throw DegenerateFeaturesError("build_pdata: every subtrajectory was rejected", 0);
    out.set.vectors.conservativeResize(kept, Eigen::NoChange);
    return out;
}

TaskVectorSet sample_uniform_sphere(int d, int n, std::uint64_t seed) {
    if (d < 1 || n < 1) throw std::invalid_argument("sample_uniform_sphere: d, n must be >= 1");
    TaskVectorSet set;
    set.provenance = TaskProvenance::uniform;
    set.vectors.resize(n, d);
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        set.vectors.row(i) = uniform_sphere_draw(d, rng).transpose();
    }
    return set;
}

TaskVectorSet sample_btd(const Gmm& gmm, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_btd: n must be >= 1");
    gmm.validate();
    TaskVectorSet set;
    set.provenance = TaskProvenance::gmm;
    set.vectors.resize(n, gmm.dim());
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        set.vectors.row(i) = btd_draw(gmm, rng).transpose();
    }
    return set;
}

TaskVectorSet sample_mixed(double alpha, const Gmm& gmm, int d, int n, std::uint64_t seed) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("sample_mixed: alpha must lie in [0, 1]");
    if (n < 1) throw std::invalid_argument("sample_mixed: n must be >= 1");
    if (gmm.dim() != d) throw std::invalid_argument("sample_mixed: gmm dimension differs from d");
    TaskVectorSet set;
    set.provenance = TaskProvenance::mixed;
    set.vectors.resize(n, d);
    const std::uint64_t select_seed = mix_seed(seed, kSelectStream);
    for (int i = 0; i < n; ++i) {
        Rng select(mix_seed(select_seed, static_cast<std::uint64_t>(i)));
        Rng payload(mix_seed(seed, static_cast<std::uint64_t>(i)));
        set.vectors.row(i) = (select.uniform() < alpha ? uniform_sphere_draw(d, payload)
                                                       : btd_draw(gmm, payload))
                                 .transpose();
    }
    return set;
}

TaskVectorSet heuristic_tasks(const Dataset& dataset, const FeatureMap& features, double gamma,
                              HeuristicMode mode, int n, std::uint64_t seed,
                              const HeuristicOptions& options) {
    if (n < 1) throw std::invalid_argument("heuristic_tasks: n must be >= 1");
    TaskVectorSet set;
    set.vectors.resize(n, features.dim());

    if (mode == HeuristicMode::subtrajectory) {
        set.provenance = TaskProvenance::subtrajectory;
        const PdataResult pool = build_pdata(dataset, features, gamma, options.n_sub,
                                             options.len_min, options.len_max,
                                             mix_seed(seed, kPoolStream));
        const std::uint64_t draw_seed = mix_seed(seed, kDrawStream);
        for (int i = 0; i < n; ++i) {
            Rng rng(mix_seed(draw_seed, static_cast<std::uint64_t>(i)));
            set.vectors.row(i) = pool.set.vectors.row(rng.uniform_int(pool.set.size()));
        }
        return set;
    }

    set.provenance = TaskProvenance::full_trajectory;
    int rejections = 0;
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        bool done = false;
        for (int attempt = 0; attempt < 100 && !done; ++attempt) {
            const auto& traj = dataset.trajectories[rng.uniform_int(dataset.size())];
            Subtrajectory whole;
            whole.parent = 0;
            whole.start = 0;
            whole.length = traj.n_states();
            whole.states = traj.states;
            if (auto z = extract_task_vector(whole, features, gamma)) {
                set.vectors.row(i) = z->z.transpose();
                done = true;
            } else {
                ++rejections;
            }
        }
        if (!done)
            throw DegenerateFeaturesError(
                "heuristic_tasks: full trajectories keep producing zero-norm sums", 0);
    }
    return set;
}

// ---------------------------------------------------------------------------
// persistence

namespace {
constexpr char kTaskMagic[8] = {'B', 'T', 'D', 'Z', 'T', 'S', 'E', 'T'};
}

void save_task_vectors(const TaskVectorSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_task_vectors: cannot open " + path);
    out.write(kTaskMagic, sizeof kTaskMagic);
    const std::uint64_t n = set.size(), d = set.dim();
    const std::uint8_t prov = static_cast<std::uint8_t>(set.provenance);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&d), sizeof d);
    out.write(reinterpret_cast<const char*>(&prov), sizeof prov);
    for (int i = 0; i < set.size(); ++i)
        for (int j = 0; j < set.dim(); ++j) {
            const double v = set.vectors(i, j);
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
}

TaskVectorSet load_task_vectors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_task_vectors: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kTaskMagic, sizeof magic) != 0)
        throw std::runtime_error("load_task_vectors: bad header in " + path);
    std::uint64_t n = 0, d = 0;
    std::uint8_t prov = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    in.read(reinterpret_cast<char*>(&d), sizeof d);
    in.read(reinterpret_cast<char*>(&prov), sizeof prov);
    TaskVectorSet set;
    set.provenance = static_cast<TaskProvenance>(prov);
    set.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::uint64_t i = 0; i < n; ++i)
        for (std::uint64_t j = 0; j < d; ++j) {
            double v;
            in.read(reinterpret_cast<char*>(&v), sizeof v);
            set.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    if (!in) throw std::runtime_error("load_task_vectors: truncated file " + path);
    return set;
}

} // namespace btdz
