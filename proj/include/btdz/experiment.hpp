#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "btdz/dataset.hpp"
#include "btdz/envs.hpp"
#include "btdz/features.hpp"
#include "btdz/gmm.hpp"
#include "btdz/spectrum.hpp"
#include "btdz/tasks.hpp"
#include "btdz/zero_shot.hpp"

namespace btdz {

inline constexpr const char* kCodeVersion = "btdz 0.1.0";

struct MdpSpec {
    std::string builtin = "fourroom8"; // ignored when path is set
    std::string path;
    double gamma = 0.99;
};

struct SamplerSpec {
    std::string kind = "btd"; // uniform | btd | subtrajectory | full_trajectory | mixed
    int gmm_components = 20;
    int n_tau = 20000;
    int len_min = 5;
    int len_max = 100;
    int em_max_iters = 200;
    double em_tol = 1e-6;
    double alpha = 0.5; // mixed only
};

struct DatasetSpec {
    int n_traj = 2000;
    int traj_len = 100;
    std::string behavior = "mix"; // mix | uniform_random
    double epsilon = 0.2;
};

struct FeatureSpec {
    std::string family = "lra_sr";
    int dim = 64;
    bool whiten = true;
    std::uint64_t seed = 7777;
};

struct TestTaskSpec {
    std::string name;
    std::vector<double> reward;
};

struct SweepSpec {
    std::string axis; // dim | alpha | gmm_k | sampler
    std::vector<double> values;
    std::vector<std::string> samplers; // used when axis == "sampler"
};

struct Prop1Spec {
    int n_z = 2000;
    int n_policies = 512;
};

struct ExperimentConfig {
    std::string name = "experiment";
    MdpSpec mdp;
    DatasetSpec dataset;
    FeatureSpec features;
    SamplerSpec sampler;
    int library_size = 64;
    int probe_size = 0; // 0 resolves to min(n_states, 512)
    std::string probe_mode = "with_replacement";
    double ridge = 1e-6;
    double vi_tol = 1e-10;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<TestTaskSpec> test_tasks; // empty: the environment's built-in tasks
    SweepSpec sweep;
    Prop1Spec prop1;
    bool emit_svg = false;

    void validate() const; // throws ConfigError
};

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::uint64_t config_hash(const ExperimentConfig& config);

/// One evaluation outcome: the CSV row schema plus invariants-check margins
/// and the wall-clock time (kept out of the CSV body so reruns stay
/// byte-identical; timings go to a sidecar file).
struct EvalRowRecord {
    std::string env;
    std::string feature_family;
    int d = 0;
    std::string sampler;
    double alpha = 0.0;
    int gmm_k = 0;
    std::uint64_t seed = 0;
    std::string task_name;
    double ret = 0.0;
    double oracle = 0.0;
    double ratio = 0.0;
    double gpi_margin = 0.0;
    double oracle_margin = 0.0;
    double wall_ms = 0.0;
};

/// In-memory pipeline with caching of datasets, feature maps and fitted
/// mixtures, shared by the CLI commands, sweeps and the acceptance suite.
/// Everything is deterministic in (config, seed) and independent of `jobs`.
class ExperimentRunner {
public:
    ExperimentRunner(const ExperimentConfig& config, int jobs = 1);

    const ExperimentConfig& config() const { return config_; }
    const BenchmarkEnv& env() const { return env_; }
    const std::vector<NamedReward>& test_tasks() const { return tasks_; }
    int resolved_probe_size() const;

    const Dataset& dataset(std::uint64_t seed);
    const FeatureMap& features(int dim, std::uint64_t seed);
    const Gmm& gmm(std::uint64_t seed, int dim, int k);
    TaskVectorSet draw_tasks(const SamplerSpec& sampler, std::uint64_t seed, int dim);
    PolicyLibrary train_library(const SamplerSpec& sampler, std::uint64_t seed, int dim);

    /// Library training + the full zero-shot evaluation of every test task.
    /// Checks the oracle-dominance and GPI-dominance invariants on each row.
    std::vector<EvalRowRecord> run_cell(const SamplerSpec& sampler, int dim, std::uint64_t seed);

    /// run_cell over every configured seed.
    std::vector<EvalRowRecord> run_all_seeds(const SamplerSpec& sampler, int dim);

    std::vector<EvalRowRecord> run_sweep();

private:
    ExperimentConfig config_;
    int jobs_;
    BenchmarkEnv env_;
    std::vector<NamedReward> tasks_;
    std::map<std::uint64_t, Dataset> datasets_;
    std::map<std::pair<int, std::uint64_t>, FeatureMap> features_;
    std::map<std::tuple<std::uint64_t, int, int>, Gmm> gmms_;
};

/// Raw rows as CSV: stamped comment header, column header, one row per record.
std::string rows_to_csv(const std::vector<EvalRowRecord>& rows, std::uint64_t config_hash);

/// Mean +/- standard error over rows grouped by every key column except seed;
/// one extra pooled row per (env, d, sampler, alpha, K) with task "all".
std::string summary_to_csv(const std::vector<EvalRowRecord>& rows, std::uint64_t config_hash);

/// Sidecar with per-row wall-clock milliseconds.
std::string timings_to_csv(const std::vector<EvalRowRecord>& rows, std::uint64_t config_hash);

struct Prop1Report {
    std::string env;
    int dim = 0;
    int n_z = 0;
    int n_policies = 0;
    double mc_estimate = 0.0;
    double mc_standard_error = 0.0;
    double trace_over_d = 0.0;
    double identity_gap = 0.0;        // |mc - trace/d|
    double max_quadform_error = 0.0;  // per-z |Var - z^T Sigma z|
    bool pass = false;
};

/// Checks the uniform-task variance identity and the per-task quadratic-form
/// identity on the configured environment.
Prop1Report validate_prop1(const ExperimentConfig& config);
std::string prop1_report_to_json(const Prop1Report& report);

// CLI command implementations. All throw ConfigError / NumericalError /
// DegenerateFeaturesError; the CLI maps exceptions to exit codes.
void cmd_gen_dataset(const ExperimentConfig& config, const std::string& out_dir, bool force,
                     int jobs);
void cmd_fit_btd(const ExperimentConfig& config, const std::string& out_dir, bool force, int jobs);
void cmd_train(const ExperimentConfig& config, const std::string& out_dir, bool force, int jobs);
void cmd_eval(const ExperimentConfig& config, const std::string& out_dir, bool force, int jobs);
void cmd_sweep(const ExperimentConfig& config, const std::string& out_dir, bool force, int jobs);
bool cmd_validate_prop1(const ExperimentConfig& config, const std::string& out_dir, bool force);

} // namespace btdz
