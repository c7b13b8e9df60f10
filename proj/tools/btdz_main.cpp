// btdz: config-driven runner for the tabular zero-shot RL testbed.
//
// Usage:
//   btdz <gen-dataset|fit-btd|train|eval|sweep|validate-prop1>
//        --config <path> --out <dir> [--jobs N] [--force]
//
// Exit codes: 0 success, 2 config error, 3 numerical error,
// 4 validate-prop1 identity-check failure.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "btdz/errors.hpp"
#include "btdz/experiment.hpp"

namespace {

void print_error_record(const std::string& type, const std::string& message) {
    nlohmann::json j;
    j["error"] = {{"type", type}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"btdz: behavioral task sampling testbed on tabular MDPs"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    int jobs = 1;
    bool force = false;

    const std::vector<std::string> commands = {"gen-dataset", "fit-btd",       "train",
                                               "eval",        "sweep",         "validate-prop1"};
    for (const auto& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--jobs", jobs, "worker threads (never affects results)");
        sub->add_flag("--force", force, "recompute outputs that already exist");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        const btdz::ExperimentConfig config = btdz::load_config(config_path);
        if (command == "gen-dataset") {
            btdz::cmd_gen_dataset(config, out_dir, force, jobs);
        } else if (command == "fit-btd") {
            btdz::cmd_fit_btd(config, out_dir, force, jobs);
        } else if (command == "train") {
            btdz::cmd_train(config, out_dir, force, jobs);
        } else if (command == "eval") {
            btdz::cmd_eval(config, out_dir, force, jobs);
        } else if (command == "sweep") {
            btdz::cmd_sweep(config, out_dir, force, jobs);
        } else if (command == "validate-prop1") {
            if (!btdz::cmd_validate_prop1(config, out_dir, force)) {
                print_error_record("acceptance", "proposition-1 identity check failed");
                return 4;
            }
        }
    } catch (const btdz::ConfigError& e) {
        print_error_record("config", e.what());
        return 2;
    } catch (const btdz::DegenerateFeaturesError& e) {
        print_error_record("degenerate_features", e.what());
        return 3;
    } catch (const btdz::NumericalError& e) {
        print_error_record("numerical", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        print_error_record("config", e.what());
        return 2;
    } catch (const std::exception& e) {
        print_error_record("internal", e.what());
        return 3;
    }
    return 0;
}
