#pragma once

#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "mtirl/mdp.hpp"

namespace mtirl {

/// Cell terrain. Walls are impassable and are excluded from the state space;
/// the remaining five kinds are the feature categories of the terrain map.
enum class Terrain : int { wall = -1, dirt = 0, grass = 1, lava = 2, gold = 3, silver = 4 };

inline constexpr int kTerrainKinds = 5;

/// Movement actions in canonical order; slip applies to the two directions
/// orthogonal to the intended one. There is no stay action: staying put only
/// happens when a move resolves against a wall or the grid edge.
enum class Action : int { up = 0, down = 1, left = 2, right = 3 };

inline constexpr int kGridActions = 4;

/// Per-terrain reward weights for one task. Walls carry no weight (they are
/// not states).
struct TaskRewardSpec {
    double dirt = 0.0;
    double grass = 0.0;
    double lava = 0.0;
    double gold = 0.0;
    double silver = 0.0;

    Vec to_vec() const {
        Vec w(kTerrainKinds);
        w << dirt, grass, lava, gold, silver;
        return w;
    }
};

/// Parsed grid: rectangular cell array plus the derived state indexing that
/// skips walls. States are numbered row-major over non-wall cells.
struct GridSpec {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<Terrain> cells;       // n_rows * n_cols, row-major
    std::vector<bool> start;          // same indexing; true for '@' cells
    std::vector<int> state_of_cell;   // cell -> state index, -1 for walls
    std::vector<int> cell_of_state;   // state -> cell index
    int n_states = 0;

    int cell_index(int r, int c) const { return r * n_cols + c; }
    Terrain terrain_at(int r, int c) const { return cells[cell_index(r, c)]; }
    Terrain terrain_of_state(int s) const { return cells[cell_of_state[s]]; }
    std::pair<int, int> state_cell(int s) const {
        int cell = cell_of_state[s];
        return {cell / n_cols, cell % n_cols};
    }
};

/// Parses the grid text format. One row per line; legal codes are
///   '#' wall, 'd' dirt, 'g' grass, 'l' lava, 'G' gold, 'S' silver,
///   '@' dirt that is also a start cell.
/// Rows must be non-empty and equal length, and at least one non-wall cell
/// must exist. Throws ValidationError(bad_grid) otherwise.
inline GridSpec parse_grid(std::string_view text) {
    std::vector<std::string> lines;
    std::string current;
    for (char ch : text) {
        if (ch == '\n') {
            lines.push_back(current);
            current.clear();
        } else if (ch != '\r') {
            current.push_back(ch);
        }
    }
    if (!current.empty()) lines.push_back(current);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) {
        throw ValidationError(ValidationError::Code::bad_grid, "grid text is empty");
    }

    GridSpec grid;
    grid.n_rows = static_cast<int>(lines.size());
    grid.n_cols = static_cast<int>(lines.front().size());
    if (grid.n_cols == 0) {
        throw ValidationError(ValidationError::Code::bad_grid, "grid row 0 is empty");
    }
    grid.cells.reserve(static_cast<size_t>(grid.n_rows) * grid.n_cols);
    for (int r = 0; r < grid.n_rows; ++r) {
        const std::string& line = lines[r];
        if (static_cast<int>(line.size()) != grid.n_cols) {
            throw ValidationError(ValidationError::Code::bad_grid,
                                  "ragged grid: row " + std::to_string(r) +
                                      " has length " + std::to_string(line.size()) +
                                      ", expected " + std::to_string(grid.n_cols));
        }
        for (char ch : line) {
            bool is_start = false;
            Terrain t;
            switch (ch) {
                case '#': t = Terrain::wall; break;
                case 'd': t = Terrain::dirt; break;
                case 'g': t = Terrain::grass; break;
                case 'l': t = Terrain::lava; break;
                case 'G': t = Terrain::gold; break;
                case 'S': t = Terrain::silver; break;
                case '@': t = Terrain::dirt; is_start = true; break;
                default:
                    throw ValidationError(ValidationError::Code::bad_grid,
                                          std::string("unknown grid code '") + ch +
                                              "' in row " + std::to_string(r));
            }
            grid.cells.push_back(t);
            grid.start.push_back(is_start);
        }
    }

    grid.state_of_cell.assign(grid.cells.size(), -1);
    for (size_t cell = 0; cell < grid.cells.size(); ++cell) {
        if (grid.cells[cell] != Terrain::wall) {
            grid.state_of_cell[cell] = grid.n_states++;
            grid.cell_of_state.push_back(static_cast<int>(cell));
        }
    }
    if (grid.n_states == 0) {
        throw ValidationError(ValidationError::Code::bad_grid, "grid has no traversable cell");
    }
    return grid;
}

/// Renders a grid back to its text form (inverse of parse_grid).
inline std::string dump_grid(const GridSpec& grid) {
    std::string out;
    for (int r = 0; r < grid.n_rows; ++r) {
        for (int c = 0; c < grid.n_cols; ++c) {
            int cell = grid.cell_index(r, c);
            char ch = '#';
            switch (grid.cells[cell]) {
                case Terrain::wall: ch = '#'; break;
                case Terrain::dirt: ch = grid.start[cell] ? '@' : 'd'; break;
                case Terrain::grass: ch = 'g'; break;
                case Terrain::lava: ch = 'l'; break;
                case Terrain::gold: ch = 'G'; break;
                case Terrain::silver: ch = 'S'; break;
            }
            out.push_back(ch);
        }
        out.push_back('\n');
    }
    return out;
}

namespace detail {

inline constexpr std::array<std::array<int, 2>, kGridActions> kMoveDelta = {{
    {{-1, 0}},  // up
    {{+1, 0}},  // down
    {{0, -1}},  // left
    {{0, +1}},  // right
}};

// The two directions orthogonal to each action, used by the slip model.
inline constexpr std::array<std::array<int, 2>, kGridActions> kOrthogonal = {{
    {{2, 3}},  // up    -> left, right
    {{2, 3}},  // down  -> left, right
    {{0, 1}},  // left  -> up, down
    {{0, 1}},  // right -> up, down
}};

// Destination state of attempting to move from (r, c) in direction dir;
// moves into walls or off the grid resolve to staying in place.
inline int resolve_move(const GridSpec& grid, int r, int c, int dir) {
    int nr = r + kMoveDelta[dir][0];
    int nc = c + kMoveDelta[dir][1];
    if (nr < 0 || nr >= grid.n_rows || nc < 0 || nc >= grid.n_cols ||
        grid.terrain_at(nr, nc) == Terrain::wall) {
        return grid.state_of_cell[grid.cell_index(r, c)];
    }
    return grid.state_of_cell[grid.cell_index(nr, nc)];
}

}  // namespace detail

/// Builds the tabular MDP for a grid and task. Dynamics: the intended move
/// succeeds with probability `slip_intended`, and each orthogonal direction
/// is taken with probability (1 - slip_intended) / 2; every blocked component
/// resolves to staying. Reward is the terrain weight of the current state,
/// identical across actions. Initial states: uniform over '@' cells when any
/// exist, else uniform over all non-wall cells.
inline TabularMdp build_mdp(const GridSpec& grid, const TaskRewardSpec& task,
                            double discount, double slip_intended = 0.8) {
    TabularMdp mdp;
    mdp.n_states = grid.n_states;
    mdp.n_actions = kGridActions;
    mdp.discount = discount;
    const double p_orth = (1.0 - slip_intended) / 2.0;

    mdp.transitions.assign(kGridActions, Mat::Zero(grid.n_states, grid.n_states));
    for (int s = 0; s < grid.n_states; ++s) {
        auto [r, c] = grid.state_cell(s);
        for (int a = 0; a < kGridActions; ++a) {
            mdp.transitions[a](s, detail::resolve_move(grid, r, c, a)) += slip_intended;
            for (int orth : detail::kOrthogonal[a]) {
                mdp.transitions[a](s, detail::resolve_move(grid, r, c, orth)) += p_orth;
            }
        }
    }

    Vec mu0 = Vec::Zero(grid.n_states);
    int n_starts = 0;
    for (int s = 0; s < grid.n_states; ++s) {
        if (grid.start[grid.cell_of_state[s]]) {
            mu0[s] = 1.0;
            ++n_starts;
        }
    }
    if (n_starts == 0) {
        mu0.setOnes();
        n_starts = grid.n_states;
    }
    mdp.initial_dist = mu0 / static_cast<double>(n_starts);

    const Vec w = task.to_vec();
    Mat reward(grid.n_states, kGridActions);
    for (int s = 0; s < grid.n_states; ++s) {
        reward.row(s).setConstant(w[static_cast<int>(grid.terrain_of_state(s))]);
    }
    mdp.reward = std::move(reward);

    validate(mdp);
    return mdp;
}

enum class FeatureKind { terrain, one_hot_state };

inline const char* to_string(FeatureKind kind) {
    return kind == FeatureKind::terrain ? "terrain" : "one_hot_state";
}

/// Action-independent feature map over grid states. `terrain` yields the
/// 5-way terrain indicator; `one_hot_state` yields a per-state indicator
/// (k = n_states), the representation used when the reward must be learned
/// separately for every state.
inline FeatureMap make_features(const GridSpec& grid, FeatureKind kind) {
    FeatureMap features;
    features.k = kind == FeatureKind::terrain ? kTerrainKinds : grid.n_states;
    features.table = Mat::Zero(static_cast<long>(grid.n_states) * kGridActions, features.k);
    for (int s = 0; s < grid.n_states; ++s) {
        int column = kind == FeatureKind::terrain
                         ? static_cast<int>(grid.terrain_of_state(s))
                         : s;
        for (int a = 0; a < kGridActions; ++a) {
            features.table(static_cast<long>(s) * kGridActions + a, column) = 1.0;
        }
    }
    return features;
}

}  // namespace mtirl
