#include "btdz/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "btdz/errors.hpp"
#include "btdz/rng.hpp"
#include "btdz/svg.hpp"

namespace fs = std::filesystem;

namespace btdz {

namespace {

// substream tags so the pipeline stages never share random streams
constexpr std::uint64_t kPdataStream = 0x9da7a;
constexpr std::uint64_t kEmStream = 0x6e31;
constexpr std::uint64_t kTaskStream = 0x7a58;
constexpr std::uint64_t kProbeStream = 0x9a0b;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string hash_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open output file " + path);
    out << content;
}

std::string stamp_header(std::uint64_t hash) {
    return std::string("# generator: ") + kCodeVersion + "\n# config: " + hash_hex(hash) + "\n";
}

struct MeanSe {
    int n = 0;
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& values) {
    MeanSe out;
    out.n = static_cast<int>(values.size());
    if (out.n == 0) return out;
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / out.n;
    if (out.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.se = std::sqrt(ss / (out.n - 1) / out.n);
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// configuration

void ExperimentConfig::validate() const {
    require(!name.empty(), "config: name must not be empty");
    if (mdp.path.empty()) {
        const auto& names = benchmark_names();
        require(std::find(names.begin(), names.end(), mdp.builtin) != names.end(),
                "config: unknown builtin mdp '" + mdp.builtin + "'");
    }
    require(mdp.gamma >= 0.0 && mdp.gamma < 1.0, "config: gamma must lie in [0, 1)");
    require(dataset.n_traj >= 1 && dataset.traj_len >= 1,
            "config: dataset sizes must be positive");
    require(dataset.behavior == "mix" || dataset.behavior == "uniform_random",
            "config: behavior must be 'mix' or 'uniform_random'");
    require(dataset.epsilon >= 0.0 && dataset.epsilon <= 1.0,
            "config: epsilon must lie in [0, 1]");
    feature_family_from_name(features.family); // throws on unknown names
    require(features.dim >= 1, "config: feature dim must be >= 1");
    const std::set<std::string> kinds = {"uniform", "btd", "subtrajectory", "full_trajectory",
                                         "mixed"};
    require(kinds.count(sampler.kind) == 1, "config: unknown sampler kind '" + sampler.kind + "'");
    require(sampler.gmm_components >= 1, "config: gmm_components must be >= 1");
    require(sampler.n_tau >= 1, "config: n_tau must be >= 1");
    require(sampler.len_min >= 1 && sampler.len_min <= sampler.len_max,
            "config: need 1 <= len_min <= len_max");
    require(sampler.em_max_iters >= 1, "config: em_max_iters must be >= 1");
    require(sampler.em_tol > 0.0, "config: em_tol must be positive");
    require(sampler.alpha >= 0.0 && sampler.alpha <= 1.0, "config: alpha must lie in [0, 1]");
    require(library_size >= 1, "config: library_size must be >= 1");
    require(probe_size >= 0, "config: probe_size must be >= 0");
    require(probe_mode == "with_replacement" || probe_mode == "exhaustive",
            "config: probe_mode must be 'with_replacement' or 'exhaustive'");
    require(ridge >= 0.0, "config: ridge must be >= 0");
    require(vi_tol > 0.0, "config: vi_tol must be positive");
    require(!seeds.empty(), "config: seeds must not be empty");
    for (const auto& task : test_tasks) {
        require(!task.name.empty() && task.name != "all",
                "config: test task names must be nonempty and not the reserved 'all'");
        require(!task.reward.empty(), "config: test task '" + task.name + "' has no reward");
    }
    if (!sweep.axis.empty()) {
        const std::set<std::string> axes = {"dim", "alpha", "gmm_k", "sampler"};
        require(axes.count(sweep.axis) == 1, "config: unknown sweep axis '" + sweep.axis + "'");
        if (sweep.axis == "sampler")
            require(!sweep.samplers.empty(), "config: sampler sweep needs sweep.samplers");
        else
            require(!sweep.values.empty(), "config: sweep needs sweep.values");
        for (const auto& s : sweep.samplers)
            require(kinds.count(s) == 1, "config: unknown sampler '" + s + "' in sweep");
    }
    require(prop1.n_z >= 2 && prop1.n_policies >= 2, "config: prop1 sizes must be >= 2");
}

std::string config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["name"] = c.name;
    j["mdp"] = {{"builtin", c.mdp.builtin}, {"path", c.mdp.path}, {"gamma", c.mdp.gamma}};
    j["dataset"] = {{"n_traj", c.dataset.n_traj},
                    {"traj_len", c.dataset.traj_len},
                    {"behavior", c.dataset.behavior},
                    {"epsilon", c.dataset.epsilon}};
    j["features"] = {{"family", c.features.family},
                     {"dim", c.features.dim},
                     {"whiten", c.features.whiten},
                     {"seed", c.features.seed}};
    j["sampler"] = {{"kind", c.sampler.kind},
                    {"gmm_components", c.sampler.gmm_components},
                    {"n_tau", c.sampler.n_tau},
                    {"len_min", c.sampler.len_min},
                    {"len_max", c.sampler.len_max},
                    {"em_max_iters", c.sampler.em_max_iters},
                    {"em_tol", c.sampler.em_tol},
                    {"alpha", c.sampler.alpha}};
    j["library_size"] = c.library_size;
    j["probe_size"] = c.probe_size;
    j["probe_mode"] = c.probe_mode;
    j["ridge"] = c.ridge;
    j["vi_tol"] = c.vi_tol;
    j["seeds"] = c.seeds;
    auto& tasks = j["test_tasks"] = nlohmann::json::array();
    for (const auto& t : c.test_tasks) tasks.push_back({{"name", t.name}, {"reward", t.reward}});
    j["sweep"] = {{"axis", c.sweep.axis},
                  {"values", c.sweep.values},
                  {"samplers", c.sweep.samplers}};
    j["prop1"] = {{"n_z", c.prop1.n_z}, {"n_policies", c.prop1.n_policies}};
    j["emit_svg"] = c.emit_svg;
    return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig c;
    try {
        c.name = j.value("name", c.name);
        if (j.contains("mdp")) {
            const auto& m = j["mdp"];
            c.mdp.builtin = m.value("builtin", c.mdp.builtin);
            c.mdp.path = m.value("path", c.mdp.path);
            c.mdp.gamma = m.value("gamma", c.mdp.gamma);
        }
        if (j.contains("dataset")) {
            const auto& d = j["dataset"];
            c.dataset.n_traj = d.value("n_traj", c.dataset.n_traj);
            c.dataset.traj_len = d.value("traj_len", c.dataset.traj_len);
            c.dataset.behavior = d.value("behavior", c.dataset.behavior);
            c.dataset.epsilon = d.value("epsilon", c.dataset.epsilon);
        }
        if (j.contains("features")) {
            const auto& f = j["features"];
            c.features.family = f.value("family", c.features.family);
            c.features.dim = f.value("dim", c.features.dim);
            c.features.whiten = f.value("whiten", c.features.whiten);
            c.features.seed = f.value("seed", c.features.seed);
        }
        if (j.contains("sampler")) {
            const auto& s = j["sampler"];
            c.sampler.kind = s.value("kind", c.sampler.kind);
            c.sampler.gmm_components = s.value("gmm_components", c.sampler.gmm_components);
            c.sampler.n_tau = s.value("n_tau", c.sampler.n_tau);
            c.sampler.len_min = s.value("len_min", c.sampler.len_min);
            c.sampler.len_max = s.value("len_max", c.sampler.len_max);
            c.sampler.em_max_iters = s.value("em_max_iters", c.sampler.em_max_iters);
            c.sampler.em_tol = s.value("em_tol", c.sampler.em_tol);
            c.sampler.alpha = s.value("alpha", c.sampler.alpha);
        }
        c.library_size = j.value("library_size", c.library_size);
        c.probe_size = j.value("probe_size", c.probe_size);
        c.probe_mode = j.value("probe_mode", c.probe_mode);
        c.ridge = j.value("ridge", c.ridge);
        c.vi_tol = j.value("vi_tol", c.vi_tol);
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("test_tasks")) {
            c.test_tasks.clear();
            for (const auto& t : j["test_tasks"])
                c.test_tasks.push_back(
                    {t.at("name").get<std::string>(), t.at("reward").get<std::vector<double>>()});
        }
        if (j.contains("sweep")) {
            const auto& s = j["sweep"];
            c.sweep.axis = s.value("axis", c.sweep.axis);
            if (s.contains("values")) c.sweep.values = s["values"].get<std::vector<double>>();
            if (s.contains("samplers"))
                c.sweep.samplers = s["samplers"].get<std::vector<std::string>>();
        }
        if (j.contains("prop1")) {
            c.prop1.n_z = j["prop1"].value("n_z", c.prop1.n_z);
            c.prop1.n_policies = j["prop1"].value("n_policies", c.prop1.n_policies);
        }
        c.emit_svg = j.value("emit_svg", c.emit_svg);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: schema violation: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ExperimentConfig c = config_from_json(text);
    if (!c.mdp.path.empty() && !fs::exists(c.mdp.path))
        throw ConfigError("config: mdp file not found: " + c.mdp.path);
    return c;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
    const std::string dump = config_to_json(config);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// runner

ExperimentRunner::ExperimentRunner(const ExperimentConfig& config, int jobs)
    : config_(config), jobs_(std::max(1, jobs)) {
    config_.validate();
    if (!config_.mdp.path.empty()) {
        env_.name = fs::path(config_.mdp.path).stem().string();
        env_.mdp = load_mdp(config_.mdp.path);
        require(!config_.test_tasks.empty(),
                "config: test_tasks are required when the mdp comes from a file");
    } else {
        env_ = make_benchmark(config_.mdp.builtin, config_.mdp.gamma);
    }
    if (config_.test_tasks.empty()) {
        tasks_ = env_.test_tasks;
    } else {
        for (const auto& t : config_.test_tasks) {
            require(static_cast<int>(t.reward.size()) == env_.mdp.n_states,
                    "config: test task '" + t.name + "' has a reward of wrong length");
            tasks_.push_back({t.name, Eigen::Map<const Eigen::VectorXd>(
                                          t.reward.data(),
                                          static_cast<Eigen::Index>(t.reward.size()))});
        }
    }
}

int ExperimentRunner::resolved_probe_size() const {
    return config_.probe_size > 0 ? config_.probe_size : std::min(env_.mdp.n_states, 512);
}

const Dataset& ExperimentRunner::dataset(std::uint64_t seed) {
    auto it = datasets_.find(seed);
    if (it != datasets_.end()) return it->second;
    BehaviorSpec behavior;
    behavior.kind = config_.dataset.behavior == "uniform_random"
                        ? BehaviorSpec::Kind::uniform_random
                        : BehaviorSpec::Kind::mix;
    behavior.epsilon = config_.dataset.epsilon;
    Dataset d = generate_dataset(env_.mdp, config_.dataset.n_traj, config_.dataset.traj_len,
                                 behavior, seed, jobs_);
    return datasets_.emplace(seed, std::move(d)).first->second;
}

const FeatureMap& ExperimentRunner::features(int dim, std::uint64_t seed) {
    const FeatureFamily family = feature_family_from_name(config_.features.family);
    // only lra_p features depend on the dataset (hence on the seed)
    const std::uint64_t key_seed = family == FeatureFamily::lra_p ? seed : 0;
    const auto key = std::make_pair(dim, key_seed);
    auto it = features_.find(key);
    if (it != features_.end()) return it->second;

    FeatureBuildOptions opts;
    opts.whiten = config_.features.whiten;
    opts.seed = config_.features.seed;
    FeatureMap map;
    if (family == FeatureFamily::lra_p) {
        const Eigen::MatrixXd p_hat =
            empirical_transition_matrix(dataset(seed), env_.mdp.n_states).matrix;
        map = build_feature_family(env_.mdp, family, dim, &p_hat, opts);
    } else {
        map = build_feature_family(env_.mdp, family, dim, nullptr, opts);
    }
    return features_.emplace(key, std::move(map)).first->second;
}

const Gmm& ExperimentRunner::gmm(std::uint64_t seed, int dim, int k) {
    const auto key = std::make_tuple(seed, dim, k);
    auto it = gmms_.find(key);
    if (it != gmms_.end()) return it->second;
    const FeatureMap& feats = features(dim, seed);
    const PdataResult pdata =
        build_pdata(dataset(seed), feats, env_.mdp.discount, config_.sampler.n_tau,
                    config_.sampler.len_min, config_.sampler.len_max, mix_seed(seed, kPdataStream));
    GmmFitResult fit = fit_gmm(pdata.set.vectors, k, config_.sampler.em_max_iters,
                               config_.sampler.em_tol, mix_seed(seed, kEmStream));
    return gmms_.emplace(key, std::move(fit.model)).first->second;
}

TaskVectorSet ExperimentRunner::draw_tasks(const SamplerSpec& sampler, std::uint64_t seed,
                                           int dim) {
    const std::uint64_t task_seed = mix_seed(seed, kTaskStream);
    const int n = config_.library_size;
    if (sampler.kind == "uniform") return sample_uniform_sphere(dim, n, task_seed);
    if (sampler.kind == "btd")
        return sample_btd(gmm(seed, dim, sampler.gmm_components), n, task_seed);
    if (sampler.kind == "mixed")
        return sample_mixed(sampler.alpha, gmm(seed, dim, sampler.gmm_components), dim, n,
                            task_seed);
    HeuristicOptions opts;
    opts.n_sub = sampler.n_tau;
    opts.len_min = sampler.len_min;
    opts.len_max = sampler.len_max;
    const HeuristicMode mode = sampler.kind == "subtrajectory" ? HeuristicMode::subtrajectory
                                                               : HeuristicMode::full_trajectory;
    return heuristic_tasks(dataset(seed), features(dim, seed), env_.mdp.discount, mode, n,
                           task_seed, opts);
}

PolicyLibrary ExperimentRunner::train_library(const SamplerSpec& sampler, std::uint64_t seed,
                                              int dim) {
    const TaskVectorSet tasks = draw_tasks(sampler, seed, dim);
    return train_policy_library(env_.mdp, features(dim, seed), tasks, config_.vi_tol, jobs_);
}

std::vector<EvalRowRecord> ExperimentRunner::run_cell(const SamplerSpec& sampler, int dim,
                                                      std::uint64_t seed) {
    const FeatureMap& feats = features(dim, seed);
    const PolicyLibrary library = train_library(sampler, seed, dim);
    const ProbeMode mode = config_.probe_mode == "exhaustive" ? ProbeMode::exhaustive
                                                              : ProbeMode::with_replacement;
    const bool uses_gmm = sampler.kind == "btd" || sampler.kind == "mixed";

    std::vector<EvalRowRecord> rows;
    rows.reserve(tasks_.size());
    for (std::size_t ti = 0; ti < tasks_.size(); ++ti) {
        const auto start = std::chrono::steady_clock::now();
        const EvalResult eval = zero_shot_eval(
            env_.mdp, library, feats, tasks_[ti].reward, resolved_probe_size(), config_.ridge,
            mix_seed(mix_seed(seed, kProbeStream), static_cast<std::uint64_t>(ti)), mode,
            config_.vi_tol);
        const auto stop = std::chrono::steady_clock::now();

        EvalRowRecord row;
        row.env = env_.name;
        row.feature_family = config_.features.family;
        row.d = dim;
        row.sampler = sampler.kind;
        row.alpha = sampler.kind == "mixed" ? sampler.alpha : (sampler.kind == "uniform" ? 1.0 : 0.0);
        row.gmm_k = uses_gmm ? sampler.gmm_components : 0;
        row.seed = seed;
        row.task_name = tasks_[ti].name;
        row.ret = eval.ret;
        row.oracle = eval.oracle;
        row.ratio = eval.ratio;
        row.gpi_margin = eval.gpi_margin;
        row.oracle_margin = eval.oracle_margin;
        row.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();

        if (!(row.oracle > 0.0))
            throw NumericalError("test task '" + row.task_name +
                                 "' has a nonpositive oracle return; ratios are undefined");
        if (!(row.ratio <= 1.0 + 1e-6))
            throw NumericalError("oracle dominance violated: ratio " + format_double(row.ratio));
        if (!(row.oracle_margin >= -1e-9))
            throw NumericalError("oracle dominance violated on task '" + row.task_name + "'");
        if (!(row.gpi_margin >= -1e-9))
            throw NumericalError("GPI dominance violated on task '" + row.task_name + "'");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<EvalRowRecord> ExperimentRunner::run_all_seeds(const SamplerSpec& sampler, int dim) {
    std::vector<EvalRowRecord> rows;
    for (std::uint64_t seed : config_.seeds) {
        auto cell = run_cell(sampler, dim, seed);
        rows.insert(rows.end(), cell.begin(), cell.end());
    }
    return rows;
}

std::vector<EvalRowRecord> ExperimentRunner::run_sweep() {
    require(!config_.sweep.axis.empty(), "config: sweep.axis is not set");
    std::vector<EvalRowRecord> rows;
    auto append = [&rows](std::vector<EvalRowRecord> cell) {
        rows.insert(rows.end(), cell.begin(), cell.end());
    };

    if (config_.sweep.axis == "dim") {
        for (double v : config_.sweep.values) {
            const int dim = static_cast<int>(v);
            require(dim >= 1, "config: sweep dim values must be >= 1");
            append(run_all_seeds(config_.sampler, dim));
        }
    } else if (config_.sweep.axis == "alpha") {
        for (double v : config_.sweep.values) {
            require(v >= 0.0 && v <= 1.0, "config: sweep alpha values must lie in [0, 1]");
            SamplerSpec s = config_.sampler;
            s.kind = "mixed";
            s.alpha = v;
            append(run_all_seeds(s, config_.features.dim));
        }
    } else if (config_.sweep.axis == "gmm_k") {
        for (double v : config_.sweep.values) {
            const int k = static_cast<int>(v);
            require(k >= 1, "config: sweep gmm_k values must be >= 1");
            SamplerSpec s = config_.sampler;
            s.kind = "btd";
            s.gmm_components = k;
            append(run_all_seeds(s, config_.features.dim));
        }
    } else { // sampler
        for (const auto& kind : config_.sweep.samplers) {
            SamplerSpec s = config_.sampler;
            s.kind = kind;
            append(run_all_seeds(s, config_.features.dim));
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV output

namespace {

const char* kRowHeader = "env,feature_family,d,sampler,alpha,K,seed,task_name,return,oracle,ratio";

std::string row_to_csv_line(const EvalRowRecord& r) {
    std::ostringstream out;
    out << r.env << ',' << r.feature_family << ',' << r.d << ',' << r.sampler << ','
        << format_double(r.alpha) << ',' << r.gmm_k << ',' << r.seed << ',' << r.task_name << ','
        << format_double(r.ret) << ',' << format_double(r.oracle) << ','
        << format_double(r.ratio);
    return out.str();
}

struct GroupKey {
    std::string env, family, sampler, task;
    int d = 0, k = 0;
    double alpha = 0.0;
    bool operator<(const GroupKey& o) const {
        return std::tie(env, family, d, sampler, alpha, k, task) <
               std::tie(o.env, o.family, o.d, o.sampler, o.alpha, o.k, o.task);
    }
};

} // namespace

std::string rows_to_csv(const std::vector<EvalRowRecord>& rows, std::uint64_t hash) {
    std::ostringstream out;
    out << stamp_header(hash) << kRowHeader << "\n";
    for (const auto& r : rows) out << row_to_csv_line(r) << "\n";
    return out.str();
}

std::string summary_to_csv(const std::vector<EvalRowRecord>& rows, std::uint64_t hash) {
    // first-appearance order of cells; per-task rows, then a pooled "all" row
    std::vector<GroupKey> order;
    std::map<GroupKey, std::vector<const EvalRowRecord*>> groups;
    for (const auto& r : rows) {
        for (const std::string& task : {r.task_name, std::string("all")}) {
            GroupKey key{r.env, r.feature_family, r.sampler, task, r.d, r.gmm_k, r.alpha};
            auto [it, inserted] = groups.emplace(key, std::vector<const EvalRowRecord*>{});
            if (inserted) order.push_back(key);
            it->second.push_back(&r);
        }
    }
    std::ostringstream out;
    out << stamp_header(hash)
        << "env,feature_family,d,sampler,alpha,K,task_name,n,mean_return,se_return,mean_oracle,"
           "mean_ratio,se_ratio\n";
    for (const auto& key : order) {
        const auto& members = groups[key];
        std::vector<double> returns, oracles, ratios;
        for (const auto* r : members) {
            returns.push_back(r->ret);
            oracles.push_back(r->oracle);
            ratios.push_back(r->ratio);
        }
        const MeanSe ret = mean_se(returns), oracle = mean_se(oracles), ratio = mean_se(ratios);
        out << key.env << ',' << key.family << ',' << key.d << ',' << key.sampler << ','
            << format_double(key.alpha) << ',' << key.k << ',' << key.task << ',' << ret.n << ','
            << format_double(ret.mean) << ',' << format_double(ret.se) << ','
            << format_double(oracle.mean) << ',' << format_double(ratio.mean) << ','
            << format_double(ratio.se) << "\n";
    }
    return out.str();
}

std::string timings_to_csv(const std::vector<EvalRowRecord>& rows, std::uint64_t hash) {
    std::ostringstream out;
    out << stamp_header(hash) << kRowHeader << ",wall_ms\n";
    for (const auto& r : rows)
        out << row_to_csv_line(r) << ',' << format_double(r.wall_ms) << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// uniform-task variance identity check (the validate-prop1 command)

Prop1Report validate_prop1(const ExperimentConfig& config) {
    ExperimentRunner runner(config, 1);
    const auto& env = runner.env();
    const std::uint64_t seed = config.seeds.front();
    const FeatureMap& feats = runner.features(config.features.dim, seed);

    const Eigen::MatrixXd occupancies =
        sample_state_occupancies(env.mdp, config.prop1.n_policies, mix_seed(seed, 0x5150)) *
        feats.phi;
    const SpectrumReport spectrum = covariance_spectrum(occupancies);
    spectrum.validate();
    const TaskVectorSet tasks =
        sample_uniform_sphere(feats.dim(), config.prop1.n_z, mix_seed(seed, 0x515a));
    const TaskVarianceEstimate mc = monte_carlo_task_variance(occupancies, tasks);

    // per-task quadratic-form identity against the same empirical covariance
    const Eigen::RowVectorXd mean = occupancies.colwise().mean();
    const Eigen::MatrixXd centered = occupancies.rowwise() - mean;
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(occupancies.rows());
    double max_gap = 0.0;
    for (int i = 0; i < tasks.size(); ++i) {
        const Eigen::VectorXd z = tasks.vectors.row(i).transpose();
        const double direct = return_variance(occupancies, z);
        const double quadform = z.dot(cov * z);
        max_gap = std::max(max_gap, std::abs(direct - quadform));
    }

    Prop1Report report;
    report.env = env.name;
    report.dim = feats.dim();
    report.n_z = config.prop1.n_z;
    report.n_policies = config.prop1.n_policies;
    report.mc_estimate = mc.estimate;
    report.mc_standard_error = mc.standard_error;
    report.trace_over_d = expected_uniform_task_variance(spectrum);
    report.identity_gap = std::abs(mc.estimate - report.trace_over_d);
    report.max_quadform_error = max_gap;
    report.pass = report.identity_gap <= 3.0 * mc.standard_error && max_gap <= 1e-9;
    return report;
}

std::string prop1_report_to_json(const Prop1Report& r) {
    nlohmann::json j;
    j["env"] = r.env;
    j["dim"] = r.dim;
    j["n_z"] = r.n_z;
    j["n_policies"] = r.n_policies;
    j["mc_estimate"] = r.mc_estimate;
    j["mc_standard_error"] = r.mc_standard_error;
    j["trace_over_d"] = r.trace_over_d;
    j["identity_gap"] = r.identity_gap;
    j["max_quadform_error"] = r.max_quadform_error;
    j["pass"] = r.pass;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// CLI commands

namespace {

std::string dataset_path(const std::string& out, const std::string& env, std::uint64_t seed) {
    return out + "/dataset_" + env + "_s" + std::to_string(seed) + ".jsonl";
}

std::string pdata_path(const std::string& out, const std::string& env, std::uint64_t seed,
                       int dim) {
    return out + "/pdata_" + env + "_s" + std::to_string(seed) + "_d" + std::to_string(dim) +
           ".bin";
}

std::string gmm_path(const std::string& out, const std::string& env, std::uint64_t seed, int dim,
                     int k) {
    return out + "/gmm_" + env + "_s" + std::to_string(seed) + "_d" + std::to_string(dim) + "_K" +
           std::to_string(k) + ".json";
}

std::string library_path(const std::string& out, const std::string& env, std::uint64_t seed,
                         int dim, const std::string& sampler) {
    return out + "/library_" + env + "_s" + std::to_string(seed) + "_d" + std::to_string(dim) +
           "_" + sampler + ".bin";
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + out_dir);
}

bool all_exist(const std::vector<std::string>& paths) {
    for (const auto& p : paths)
        if (!fs::exists(p)) return false;
    return true;
}

void notice_skip(const std::string& what) {
    std::cerr << "note: " << what << " outputs already exist; skipping (use --force to redo)\n";
}

} // namespace

void cmd_gen_dataset(const ExperimentConfig& config, const std::string& out_dir, bool force,
                     int jobs) {
    ensure_out_dir(out_dir);
    ExperimentRunner runner(config, jobs);
    std::vector<std::string> outputs;
    for (std::uint64_t seed : config.seeds)
        outputs.push_back(dataset_path(out_dir, runner.env().name, seed));
    if (!force && all_exist(outputs)) {
        notice_skip("gen-dataset");
        return;
    }
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        save_dataset(runner.dataset(config.seeds[i]), outputs[i]);
        std::cerr << "wrote " << outputs[i] << "\n";
    }
}

void cmd_fit_btd(const ExperimentConfig& config, const std::string& out_dir, bool force,
                 int jobs) {
    ensure_out_dir(out_dir);
    ExperimentRunner runner(config, jobs);
    const std::string env = runner.env().name;
    const int dim = config.features.dim;
    const int k = config.sampler.gmm_components;

    std::vector<std::string> outputs;
    for (std::uint64_t seed : config.seeds) {
        outputs.push_back(pdata_path(out_dir, env, seed, dim));
        outputs.push_back(gmm_path(out_dir, env, seed, dim, k));
    }
    if (!force && all_exist(outputs)) {
        notice_skip("fit-btd");
        return;
    }
    for (std::uint64_t seed : config.seeds) {
        const std::string dpath = dataset_path(out_dir, env, seed);
        if (!fs::exists(dpath))
            throw ConfigError("fit-btd: missing dataset file " + dpath + " (run gen-dataset)");
        const Dataset dataset = load_dataset(dpath);
        const FeatureMap& feats = runner.features(dim, seed);
        const PdataResult pdata = build_pdata(dataset, feats, runner.env().mdp.discount,
                                              config.sampler.n_tau, config.sampler.len_min,
                                              config.sampler.len_max, mix_seed(seed, kPdataStream));
        if (pdata.rejections > 0)
            std::cerr << "note: seed " << seed << ": " << pdata.rejections
                      << " zero-norm subtrajectories rejected\n";
        save_task_vectors(pdata.set, pdata_path(out_dir, env, seed, dim));
        const GmmFitResult fit =
            fit_gmm(pdata.set.vectors, k, config.sampler.em_max_iters, config.sampler.em_tol,
                    mix_seed(seed, kEmStream));
        if (fit.dropped_components > 0)
            std::cerr << "warning: seed " << seed << ": " << fit.dropped_components
                      << " GMM components collapsed and were dropped\n";
        save_gmm(fit.model, gmm_path(out_dir, env, seed, dim, k));
        std::cerr << "wrote " << gmm_path(out_dir, env, seed, dim, k) << "\n";
    }
}

void cmd_train(const ExperimentConfig& config, const std::string& out_dir, bool force, int jobs) {
    ensure_out_dir(out_dir);
    ExperimentRunner runner(config, jobs);
    const std::string env = runner.env().name;
    const int dim = config.features.dim;
    const auto& sampler = config.sampler;
    const bool needs_gmm = sampler.kind == "btd" || sampler.kind == "mixed";

    std::vector<std::string> outputs;
    for (std::uint64_t seed : config.seeds)
        outputs.push_back(library_path(out_dir, env, seed, dim, sampler.kind));
    if (!force && all_exist(outputs)) {
        notice_skip("train");
        return;
    }
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        const std::uint64_t seed = config.seeds[i];
        const FeatureMap& feats = runner.features(dim, seed);
        TaskVectorSet tasks;
        const std::uint64_t task_seed = mix_seed(seed, kTaskStream);
        if (sampler.kind == "uniform") {
            tasks = sample_uniform_sphere(dim, config.library_size, task_seed);
        } else {
            const std::string dpath = dataset_path(out_dir, env, seed);
            if (!fs::exists(dpath))
                throw ConfigError("train: missing dataset file " + dpath + " (run gen-dataset)");
            const Dataset dataset = load_dataset(dpath);
            if (dataset.mdp_fingerprint != runner.env().mdp.fingerprint())
                throw ConfigError("train: dataset " + dpath + " was generated by a different MDP");
            if (needs_gmm) {
                const std::string gpath =
                    gmm_path(out_dir, env, seed, dim, sampler.gmm_components);
                if (!fs::exists(gpath))
                    throw ConfigError("train: missing GMM file " + gpath + " (run fit-btd)");
                const Gmm gmm = load_gmm(gpath);
                tasks = sampler.kind == "btd"
                            ? sample_btd(gmm, config.library_size, task_seed)
                            : sample_mixed(sampler.alpha, gmm, dim, config.library_size,
                                           task_seed);
            } else {
                HeuristicOptions opts;
                opts.n_sub = sampler.n_tau;
                opts.len_min = sampler.len_min;
                opts.len_max = sampler.len_max;
                const HeuristicMode mode = sampler.kind == "subtrajectory"
                                               ? HeuristicMode::subtrajectory
                                               : HeuristicMode::full_trajectory;
                tasks = heuristic_tasks(dataset, feats, runner.env().mdp.discount, mode,
                                        config.library_size, task_seed, opts);
            }
        }
        const PolicyLibrary library =
            train_policy_library(runner.env().mdp, feats, tasks, config.vi_tol, jobs);
        save_library(library, outputs[i]);
        std::cerr << "wrote " << outputs[i] << "\n";
    }
}

void cmd_eval(const ExperimentConfig& config, const std::string& out_dir, bool force, int jobs) {
    ensure_out_dir(out_dir);
    ExperimentRunner runner(config, jobs);
    const std::string env = runner.env().name;
    const int dim = config.features.dim;
    const std::uint64_t hash = config_hash(config);
    const std::string raw_path = out_dir + "/eval_raw.csv";
    const std::string summary_path = out_dir + "/eval_summary.csv";
    if (!force && all_exist({raw_path, summary_path})) {
        notice_skip("eval");
        return;
    }

    const ProbeMode mode = config.probe_mode == "exhaustive" ? ProbeMode::exhaustive
                                                             : ProbeMode::with_replacement;
    std::vector<EvalRowRecord> rows;
    for (std::uint64_t seed : config.seeds) {
        const std::string lpath = library_path(out_dir, env, seed, dim, config.sampler.kind);
        if (!fs::exists(lpath))
            throw ConfigError("eval: missing library file " + lpath + " (run train)");
        const PolicyLibrary library = load_library(lpath);
        const FeatureMap& feats = runner.features(dim, seed);
        if (library.features_fingerprint != feats.fingerprint() ||
            library.mdp_fingerprint != runner.env().mdp.fingerprint())
            throw ConfigError("eval: library " + lpath +
                              " does not match this config's MDP/features");
        const auto& tasks = runner.test_tasks();
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
            const auto t0 = std::chrono::steady_clock::now();
            const EvalResult eval = zero_shot_eval(
                runner.env().mdp, library, feats, tasks[ti].reward, runner.resolved_probe_size(),
                config.ridge, mix_seed(mix_seed(seed, kProbeStream), static_cast<std::uint64_t>(ti)),
                mode, config.vi_tol);
            const auto t1 = std::chrono::steady_clock::now();
            EvalRowRecord row;
            row.env = env;
            row.feature_family = config.features.family;
            row.d = dim;
            row.sampler = config.sampler.kind;
            row.alpha = config.sampler.kind == "mixed"
                            ? config.sampler.alpha
                            : (config.sampler.kind == "uniform" ? 1.0 : 0.0);
            row.gmm_k = (config.sampler.kind == "btd" || config.sampler.kind == "mixed")
                            ? config.sampler.gmm_components
                            : 0;
            row.seed = seed;
            row.task_name = tasks[ti].name;
            row.ret = eval.ret;
            row.oracle = eval.oracle;
            row.ratio = eval.ratio;
            row.gpi_margin = eval.gpi_margin;
            row.oracle_margin = eval.oracle_margin;
            row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            if (!(row.oracle > 0.0) || !(row.oracle_margin >= -1e-9) ||
                !(row.gpi_margin >= -1e-9))
                throw NumericalError("eval: dominance invariant violated on task '" +
                                     row.task_name + "'");
            rows.push_back(std::move(row));
        }
    }
    write_text_file(raw_path, rows_to_csv(rows, hash));
    write_text_file(summary_path, summary_to_csv(rows, hash));
    write_text_file(out_dir + "/eval_timings.csv", timings_to_csv(rows, hash));
    std::cerr << "wrote " << raw_path << "\n";
}

void cmd_sweep(const ExperimentConfig& config, const std::string& out_dir, bool force, int jobs) {
    ensure_out_dir(out_dir);
    require(!config.sweep.axis.empty(), "sweep: config has no sweep.axis");
    const std::uint64_t hash = config_hash(config);
    const std::string base = out_dir + "/sweep_" + config.sweep.axis;
    const std::string raw_path = base + "_raw.csv";
    const std::string summary_path = base + "_summary.csv";
    if (!force && all_exist({raw_path, summary_path})) {
        notice_skip("sweep");
        return;
    }

    ExperimentRunner runner(config, jobs);
    const std::vector<EvalRowRecord> rows = runner.run_sweep();
    write_text_file(raw_path, rows_to_csv(rows, hash));
    write_text_file(summary_path, summary_to_csv(rows, hash));
    write_text_file(base + "_timings.csv", timings_to_csv(rows, hash));

    if (config.emit_svg) {
        // pooled ratio per axis value, one series per sampler kind
        std::map<std::string, std::map<double, std::pair<double, int>>> acc;
        for (const auto& r : rows) {
            double x = 0.0;
            if (config.sweep.axis == "dim") x = r.d;
            else if (config.sweep.axis == "alpha") x = r.alpha;
            else if (config.sweep.axis == "gmm_k") x = r.gmm_k;
            else x = static_cast<double>(&r - rows.data()); // sampler axis has no numeric x
            auto& slot = acc[r.sampler][x];
            slot.first += r.ratio;
            slot.second += 1;
        }
        std::vector<ChartSeries> series;
        for (const auto& [sampler, points] : acc) {
            ChartSeries s;
            s.label = sampler;
            for (const auto& [x, sum_n] : points)
                s.points.emplace_back(x, sum_n.first / sum_n.second);
            series.push_back(std::move(s));
        }
        write_text_file(base + ".svg",
                        line_chart_svg(config.name + " (" + config.sweep.axis + " sweep)",
                                       config.sweep.axis, "mean oracle ratio", series));
    }
    std::cerr << "wrote " << raw_path << "\n";
}

bool cmd_validate_prop1(const ExperimentConfig& config, const std::string& out_dir, bool force) {
    ensure_out_dir(out_dir);
    const std::string path = out_dir + "/prop1_report.json";
    (void)force;
    const Prop1Report report = validate_prop1(config);
    write_text_file(path, prop1_report_to_json(report));
    std::cout << (report.pass ? "PASS" : "FAIL") << " prop1 identity on " << report.env
              << ": mc=" << format_double(report.mc_estimate)
              << " trace/d=" << format_double(report.trace_over_d)
              << " gap=" << format_double(report.identity_gap)
              << " (3se=" << format_double(3.0 * report.mc_standard_error)
              << "), max quadform error=" << format_double(report.max_quadform_error) << "\n";
    return report.pass;
}

} // namespace btdz
