#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "btdz/errors.hpp"
#include "btdz/experiment.hpp"

using namespace btdz;
namespace fs = std::filesystem;

namespace {

/// Small corridor pipeline that keeps the experiment tests fast.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.name = "tiny";
    cfg.mdp.builtin = "corridor12";
    cfg.mdp.gamma = 0.95;
    cfg.dataset.n_traj = 100;
    cfg.dataset.traj_len = 30;
    cfg.features.family = "lra_sr";
    cfg.features.dim = 6;
    cfg.sampler.kind = "btd";
    cfg.sampler.gmm_components = 3;
    cfg.sampler.n_tau = 400;
    cfg.sampler.len_min = 2;
    cfg.sampler.len_max = 20;
    cfg.sampler.em_max_iters = 30;
    cfg.library_size = 8;
    cfg.probe_size = 12;
    cfg.seeds = {1, 2};
    return cfg;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("config JSON round-trips byte-identically") {
    ExperimentConfig cfg = tiny_config();
    cfg.test_tasks.push_back({"probe_task", std::vector<double>(12, 0.25)});
    cfg.sweep.axis = "alpha";
    cfg.sweep.values = {0.0, 0.5, 1.0};
    const std::string dump = config_to_json(cfg);
    const ExperimentConfig back = config_from_json(dump);
    CHECK(config_to_json(back) == dump);
    CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("config validation rejects malformed settings") {
    ExperimentConfig cfg = tiny_config();
    cfg.mdp.builtin = "atari";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.sampler.kind = "gradient";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.seeds.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.probe_mode = "psychic";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.test_tasks.push_back({"all", {1.0}});
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{ not json"), ConfigError);
}

TEST_CASE("runner produces valid rows and respects the invariants") {
    ExperimentRunner runner(tiny_config(), 1);
    CHECK(runner.env().mdp.n_states == 12);
    CHECK(runner.test_tasks().size() == 4);
    CHECK(runner.resolved_probe_size() == 12);

    const auto rows = runner.run_cell(tiny_config().sampler, 6, 1);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
        CHECK(r.env == "corridor12");
        CHECK(r.d == 6);
        CHECK(r.sampler == "btd");
        CHECK(r.gmm_k == 3);
        CHECK(r.oracle > 0.0);
        CHECK(r.ratio <= 1.0 + 1e-6);
        CHECK(r.gpi_margin >= -1e-9);
        CHECK(r.oracle_margin >= -1e-9);
    }
}

TEST_CASE("sweep emits |values| x |seeds| x |tasks| rows and reruns byte-identically") {
    ExperimentConfig cfg = tiny_config();
    cfg.sweep.axis = "alpha";
    cfg.sweep.values = {0.0, 1.0};
    ExperimentRunner runner(cfg, 1);
    const auto rows = runner.run_sweep();
    CHECK(rows.size() == 2 * 2 * 4);

    ExperimentRunner fresh(cfg, 1);
    const auto rows2 = fresh.run_sweep();
    const std::uint64_t hash = config_hash(cfg);
    CHECK(rows_to_csv(rows2, hash) == rows_to_csv(rows, hash));
    CHECK(summary_to_csv(rows2, hash) == summary_to_csv(rows, hash));
}

TEST_CASE("sweep over samplers uses the requested kinds") {
    ExperimentConfig cfg = tiny_config();
    cfg.sweep.axis = "sampler";
    cfg.sweep.samplers = {"uniform", "subtrajectory"};
    ExperimentRunner runner(cfg, 1);
    const auto rows = runner.run_sweep();
    REQUIRE(rows.size() == 2 * 2 * 4);
    CHECK(rows.front().sampler == "uniform");
    CHECK(rows.back().sampler == "subtrajectory");
}

TEST_CASE("worker count does not change results") {
    ExperimentConfig cfg = tiny_config();
    ExperimentRunner serial(cfg, 1);
    ExperimentRunner threaded(cfg, 4);
    const auto a = serial.run_cell(cfg.sampler, 6, 2);
    const auto b = threaded.run_cell(cfg.sampler, 6, 2);
    const std::uint64_t hash = config_hash(cfg);
    CHECK(rows_to_csv(a, hash) == rows_to_csv(b, hash));
}

TEST_CASE("file pipeline: gen-dataset, fit-btd, train, eval") {
    TempDir dir("btdz_test_pipeline");
    const ExperimentConfig cfg = tiny_config();

    // prerequisites are files; out-of-order commands must fail loudly
    CHECK_THROWS_AS(cmd_fit_btd(cfg, dir.str(), false, 1), ConfigError);
    CHECK_THROWS_AS(cmd_train(cfg, dir.str(), false, 1), ConfigError);
    CHECK_THROWS_AS(cmd_eval(cfg, dir.str(), false, 1), ConfigError);

    cmd_gen_dataset(cfg, dir.str(), false, 1);
    CHECK(fs::exists(dir.path / "dataset_corridor12_s1.jsonl"));
    CHECK(fs::exists(dir.path / "dataset_corridor12_s2.jsonl"));

    cmd_fit_btd(cfg, dir.str(), false, 1);
    CHECK(fs::exists(dir.path / "gmm_corridor12_s1_d6_K3.json"));
    CHECK(fs::exists(dir.path / "pdata_corridor12_s1_d6.bin"));

    cmd_train(cfg, dir.str(), false, 1);
    CHECK(fs::exists(dir.path / "library_corridor12_s1_d6_btd.bin"));

    cmd_eval(cfg, dir.str(), false, 1);
    const std::string raw = slurp((dir.path / "eval_raw.csv").string());
    CHECK(raw.find("env,feature_family,d,sampler,alpha,K,seed,task_name,return,oracle,ratio") !=
          std::string::npos);
    // 2 seeds x 4 tasks data rows after the two stamped comment lines
    CHECK(std::count(raw.begin(), raw.end(), '\n') == 2 + 1 + 8);
    const std::string summary = slurp((dir.path / "eval_summary.csv").string());
    CHECK(summary.find(",all,") != std::string::npos);

    // timings live in the sidecar, not the comparable body
    CHECK(raw.find("wall_ms") == std::string::npos);
    CHECK(slurp((dir.path / "eval_timings.csv").string()).find("wall_ms") != std::string::npos);

    // idempotence: a rerun without --force leaves bytes unchanged
    const std::string before = slurp((dir.path / "eval_raw.csv").string());
    cmd_eval(cfg, dir.str(), false, 1);
    CHECK(slurp((dir.path / "eval_raw.csv").string()) == before);
}

TEST_CASE("cmd_sweep writes raw and summary files") {
    TempDir dir("btdz_test_sweep");
    ExperimentConfig cfg = tiny_config();
    cfg.sweep.axis = "dim";
    cfg.sweep.values = {4, 6};
    cfg.emit_svg = true;
    cmd_sweep(cfg, dir.str(), false, 1);
    CHECK(fs::exists(dir.path / "sweep_dim_raw.csv"));
    CHECK(fs::exists(dir.path / "sweep_dim_summary.csv"));
    CHECK(fs::exists(dir.path / "sweep_dim.svg"));
    const std::string svg = slurp((dir.path / "sweep_dim.svg").string());
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("validate_prop1 passes on a small configuration") {
    ExperimentConfig cfg = tiny_config();
    cfg.features.family = "random_orthonormal";
    cfg.features.dim = 8;
    cfg.prop1.n_z = 400;
    cfg.prop1.n_policies = 128;
    const Prop1Report report = validate_prop1(cfg);
    CHECK(report.pass);
    CHECK(report.identity_gap <= 3.0 * report.mc_standard_error);
    CHECK(report.max_quadform_error <= 1e-9);

    TempDir dir("btdz_test_prop1");
    CHECK(cmd_validate_prop1(cfg, dir.str(), false));
    CHECK(fs::exists(dir.path / "prop1_report.json"));
}

TEST_CASE("custom mdp from file requires explicit test tasks") {
    TempDir dir("btdz_test_custom_mdp");
    const BenchmarkEnv env = make_corridor12(0.9);
    const std::string mdp_path = (dir.path / "custom.json").string();
    save_mdp(env.mdp, mdp_path);

    ExperimentConfig cfg = tiny_config();
    cfg.mdp.builtin.clear();
    cfg.mdp.path = mdp_path;
    CHECK_THROWS_AS(ExperimentRunner(cfg, 1), ConfigError);

    std::vector<double> reward(12, 0.0);
    reward.back() = 1.0;
    cfg.test_tasks.push_back({"goal", reward});
    ExperimentRunner runner(cfg, 1);
    CHECK(runner.env().mdp.n_states == 12);
    CHECK(runner.test_tasks().size() == 1);
}
