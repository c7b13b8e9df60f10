#include "btdz/envs.hpp"

#include <cmath>
#include <stdexcept>

namespace btdz {

namespace {

// actions shared by the grid environments
enum GridAction { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
constexpr int kRowStep[4] = {-1, 1, 0, 0};
constexpr int kColStep[4] = {0, 0, -1, 1};

struct Grid {
    int rows, cols;
    int state(int r, int c) const { return r * cols + c; }
    int row(int s) const { return s / cols; }
    int col(int s) const { return s % cols; }
    bool inside(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }
};

Eigen::VectorXd uniform_start(int n) { return Eigen::VectorXd::Constant(n, 1.0 / n); }

} // namespace

BenchmarkEnv make_fourroom8(double gamma, double slip) {
    const Grid grid{8, 8};
    const int n = grid.rows * grid.cols;

    // thin walls along the midlines; doors at rows {1, 6} and cols {1, 6}
    auto wall_between = [&](int r, int c, int a) {
        const int nr = r + kRowStep[a], nc = c + kColStep[a];
        if (!grid.inside(nr, nc)) return true;
        if (c == 3 && nc == 4 && r != 1 && r != 6) return true;
        if (c == 4 && nc == 3 && r != 1 && r != 6) return true;
        if (r == 3 && nr == 4 && c != 1 && c != 6) return true;
        if (r == 4 && nr == 3 && c != 1 && c != 6) return true;
        return false;
    };
    auto move = [&](int s, int a) {
        const int r = grid.row(s), c = grid.col(s);
        return wall_between(r, c, a) ? s : grid.state(r + kRowStep[a], c + kColStep[a]);
    };

    BenchmarkEnv env;
    env.name = "fourroom8";
    env.mdp.n_states = n;
    env.mdp.n_actions = 4;
    env.mdp.discount = gamma;
    env.mdp.initial_dist = uniform_start(n);
    env.mdp.transitions.assign(4, Eigen::MatrixXd::Zero(n, n));
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < 4; ++a) {
            const int perp1 = (a == kUp || a == kDown) ? kLeft : kUp;
            const int perp2 = (a == kUp || a == kDown) ? kRight : kDown;
            env.mdp.transitions[a](s, move(s, a)) += 1.0 - slip;
            env.mdp.transitions[a](s, move(s, perp1)) += slip / 2.0;
            env.mdp.transitions[a](s, move(s, perp2)) += slip / 2.0;
        }
    }
    env.mdp.validate();

    // shaped rewards, dense in the state space (sparse indicators would make
    // small reward probes uninformative)
    Eigen::VectorXd reach_corner(n), reach_center(n), avoid_region(n), traverse(n);
    for (int s = 0; s < n; ++s) {
        const int r = grid.row(s), c = grid.col(s);
        reach_corner[s] = std::exp(-(std::abs(r - 7) + std::abs(c - 7)) / 2.0);
        const int dc = std::min({std::abs(r - 3) + std::abs(c - 3), std::abs(r - 3) + std::abs(c - 4),
                                 std::abs(r - 4) + std::abs(c - 3), std::abs(r - 4) + std::abs(c - 4)});
        reach_center[s] = std::exp(-dc / 2.0);
        avoid_region[s] = (r >= 4 && c >= 4) ? -1.0 : 1.0;
        traverse[s] = c / 7.0;
    }

    env.test_tasks = {{"reach_corner", reach_corner},
                      {"reach_center", reach_center},
                      {"avoid_region", avoid_region},
                      {"traverse", traverse}};
    return env;
}

BenchmarkEnv make_corridor12(double gamma) {
    const int n = 12;
    BenchmarkEnv env;
    env.name = "corridor12";
    env.mdp.n_states = n;
    env.mdp.n_actions = 2;
    env.mdp.discount = gamma;
    env.mdp.initial_dist = uniform_start(n);
    env.mdp.transitions.assign(2, Eigen::MatrixXd::Zero(n, n));
    for (int s = 0; s < n; ++s) {
        const int fwd = std::min(s + 1, n - 1);
        const int bwd = std::max(s - 1, 0);
        env.mdp.transitions[0](s, fwd) += 0.9; // cheap direction
        env.mdp.transitions[0](s, s) += 0.1;
        env.mdp.transitions[1](s, bwd) += 0.6; // expensive reverse
        env.mdp.transitions[1](s, s) += 0.4;
    }
    env.mdp.validate();

    Eigen::VectorXd reach_end(n), reach_start(n), advance(n), retreat(n);
    for (int s = 0; s < n; ++s) {
        reach_end[s] = std::exp(-(n - 1 - s) / 3.0);
        reach_start[s] = std::exp(-s / 3.0);
        advance[s] = s / static_cast<double>(n - 1);
        retreat[s] = (n - 1 - s) / static_cast<double>(n - 1);
    }
    env.test_tasks = {{"reach_end", reach_end},
                      {"reach_start", reach_start},
                      {"advance", advance},
                      {"retreat", retreat}};
    return env;
}

BenchmarkEnv make_windgrid6(double gamma, double wind) {
    const Grid grid{6, 6};
    const int n = grid.rows * grid.cols;
    auto move = [&](int s, int a) {
        const int r = grid.row(s) + kRowStep[a], c = grid.col(s) + kColStep[a];
        return grid.inside(r, c) ? grid.state(r, c) : s;
    };

    BenchmarkEnv env;
    env.name = "windgrid6";
    env.mdp.n_states = n;
    env.mdp.n_actions = 4;
    env.mdp.discount = gamma;
    // episodes start upwind (west column) so rollouts cover the whole grid
    // instead of piling up against the east wall
    env.mdp.initial_dist = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < grid.rows; ++r) env.mdp.initial_dist[grid.state(r, 0)] = 1.0 / grid.rows;
    env.mdp.transitions.assign(4, Eigen::MatrixXd::Zero(n, n));
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < 4; ++a) {
            const int landed = move(s, a);
            env.mdp.transitions[a](s, landed) += 1.0 - wind;
            env.mdp.transitions[a](s, move(landed, kRight)) += wind; // eastward drift
        }
    }
    env.mdp.validate();

    Eigen::VectorXd reach_corner(n), reach_center(n), avoid_region(n), traverse_west(n);
    for (int s = 0; s < n; ++s) {
        const int r = grid.row(s), c = grid.col(s);
        reach_corner[s] = std::exp(-(r + c) / 2.0); // upwind corner (0, 0)
        const int dc = std::min({std::abs(r - 2) + std::abs(c - 2), std::abs(r - 2) + std::abs(c - 3),
                                 std::abs(r - 3) + std::abs(c - 2), std::abs(r - 3) + std::abs(c - 3)});
        reach_center[s] = std::exp(-dc / 2.0);
        avoid_region[s] = c >= 4 ? -1.0 : 1.0;
        traverse_west[s] = (5 - c) / 5.0;
    }

    env.test_tasks = {{"reach_corner", reach_corner},
                      {"reach_center", reach_center},
                      {"avoid_region", avoid_region},
                      {"traverse_west", traverse_west}};
    return env;
}

BenchmarkEnv make_benchmark(const std::string& name, double gamma) {
    if (name == "fourroom8") return make_fourroom8(gamma);
    if (name == "corridor12") return make_corridor12(gamma);
    if (name == "windgrid6") return make_windgrid6(gamma);
    throw std::invalid_argument("unknown benchmark environment: " + name);
}

const std::vector<std::string>& benchmark_names() {
    static const std::vector<std::string> names = {"fourroom8", "corridor12", "windgrid6"};
    return names;
}

} // namespace btdz
