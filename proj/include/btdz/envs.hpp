#pragma once

#include <string>
#include <vector>

#include "btdz/mdp.hpp"

namespace btdz {

struct NamedReward {
    std::string name;
    Eigen::VectorXd reward;
};

/// A benchmark MDP together with its named test rewards. Every test reward is
/// designed with a strictly positive oracle return so oracle-ratios are well
/// defined.
struct BenchmarkEnv {
    std::string name;
    TabularMdp mdp;
    std::vector<NamedReward> test_tasks;
};

/// 8x8 gridworld split into four rooms by walls with two doors each way;
/// moves slip to a perpendicular direction with the given probability.
BenchmarkEnv make_fourroom8(double gamma = 0.99, double slip = 0.1);

/// 12-state corridor with a cheap forward action and an expensive reverse
/// action (the forward step succeeds much more often).
BenchmarkEnv make_corridor12(double gamma = 0.99);

/// 6x6 open grid where a constant wind pushes the agent east after each move.
BenchmarkEnv make_windgrid6(double gamma = 0.99, double wind = 0.25);

BenchmarkEnv make_benchmark(const std::string& name, double gamma);

const std::vector<std::string>& benchmark_names();

} // namespace btdz
