#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "btdz/dataset.hpp"
#include "btdz/gmm.hpp"
#include "btdz/mdp.hpp"

namespace btdz {

/// Unit task vector z; defines the linear reward R(s) = phi(s)^T z.
struct TaskVector {
    Eigen::VectorXd z;
};

enum class TaskProvenance { subtrajectory, full_trajectory, uniform, gmm, mixed };

std::string provenance_name(TaskProvenance p);

/// A batch of unit task vectors, one per row.
struct TaskVectorSet {
    Eigen::MatrixXd vectors; // (n, d)
    TaskProvenance provenance = TaskProvenance::uniform;

    int size() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
    TaskVector row(int i) const { return TaskVector{vectors.row(i).transpose()}; }

    void validate() const; // every row unit-norm within 1e-9
};

/// Discounted feature sum over the subtrajectory's states (final state
/// included), normalized to the unit sphere. Returns nullopt when the sum
/// norm is below 1e-10; callers count such rejections.
std::optional<TaskVector> extract_task_vector(const Subtrajectory& sub, const FeatureMap& features,
                                              double gamma);

struct PdataResult {
    TaskVectorSet set;
    int rejections = 0;
};

/// Samples subtrajectories and extracts a task vector from each: the
/// empirical task set. Throws DegenerateFeaturesError if every sample is
/// rejected.
PdataResult build_pdata(const Dataset& dataset, const FeatureMap& features, double gamma,
                        int n_sub, int len_min, int len_max, std::uint64_t seed);

/// Normalized i.i.d. Gaussian vectors: uniform on the unit sphere.
TaskVectorSet sample_uniform_sphere(int d, int n, std::uint64_t seed);

/// Draws from the mixture and projects to the unit sphere.
TaskVectorSet sample_btd(const Gmm& gmm, int n, std::uint64_t seed);

/// Each sample is uniform-sphere with probability alpha, otherwise a BTD
/// draw. Sample i consumes the same substream as the pure samplers would, so
/// alpha = 0 reproduces sample_btd exactly and alpha = 1 reproduces
/// sample_uniform_sphere exactly under the same seed.
TaskVectorSet sample_mixed(double alpha, const Gmm& gmm, int d, int n, std::uint64_t seed);

enum class HeuristicMode { full_trajectory, subtrajectory };

struct HeuristicOptions {
    int n_sub = 20000; // pool size for subtrajectory mode
    int len_min = 5;
    int len_max = 100;
};

/// Dataset-direct samplers: `subtrajectory` resamples the empirical task set
/// with replacement; `full_trajectory` extracts task vectors from whole
/// trajectories.
TaskVectorSet heuristic_tasks(const Dataset& dataset, const FeatureMap& features, double gamma,
                              HeuristicMode mode, int n, std::uint64_t seed,
                              const HeuristicOptions& options = {});

void save_task_vectors(const TaskVectorSet& set, const std::string& path);
TaskVectorSet load_task_vectors(const std::string& path);

} // namespace btdz
