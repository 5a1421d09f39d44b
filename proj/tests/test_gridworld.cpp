// Tests for grid parsing and MDP construction: text format errors, slip
// dynamics enumerated by hand on small grids, feature maps, and structural
// checks of the shipped 9x9 fixture.
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>

#include "mtirl/gridworld.hpp"
#include "oracles.hpp"

namespace {

using mtirl::Action;
using mtirl::GridSpec;
using mtirl::Mat;
using mtirl::TabularMdp;
using mtirl::TaskRewardSpec;
using mtirl::Terrain;
using mtirl::ValidationError;
using mtirl::Vec;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    EXPECT_TRUE(in.good()) << "cannot open " << path;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

TaskRewardSpec canonical_task_a() {
    TaskRewardSpec t;
    t.dirt = 0.0;
    t.grass = -1.0;
    t.lava = -10.0;
    t.silver = 5.0;
    t.gold = 0.0;
    return t;
}

TEST(ParseGrid, SingleDirtCell) {
    GridSpec grid = mtirl::parse_grid("d");
    EXPECT_EQ(grid.n_rows, 1);
    EXPECT_EQ(grid.n_cols, 1);
    EXPECT_EQ(grid.n_states, 1);
    EXPECT_EQ(grid.terrain_at(0, 0), Terrain::dirt);
    EXPECT_FALSE(grid.start[0]);
}

TEST(ParseGrid, WallsExcludedFromStates) {
    GridSpec grid = mtirl::parse_grid("d#\n#d");
    EXPECT_EQ(grid.n_states, 2);
    EXPECT_EQ(grid.state_of_cell[grid.cell_index(0, 1)], -1);
    EXPECT_EQ(grid.state_of_cell[grid.cell_index(1, 0)], -1);
    EXPECT_EQ(grid.state_of_cell[grid.cell_index(0, 0)], 0);
    EXPECT_EQ(grid.state_of_cell[grid.cell_index(1, 1)], 1);
}

TEST(ParseGrid, TrailingNewlineOptional) {
    GridSpec a = mtirl::parse_grid("dg\nld");
    GridSpec b = mtirl::parse_grid("dg\nld\n");
    EXPECT_EQ(mtirl::dump_grid(a), mtirl::dump_grid(b));
}

TEST(ParseGrid, DumpRoundTrips) {
    const std::string text = "Sgd\n#@l\nddG\n";
    EXPECT_EQ(mtirl::dump_grid(mtirl::parse_grid(text)), text);
}

TEST(ParseGrid, ErrorsAreBadGrid) {
    auto expect_bad = [](const std::string& text) {
        try {
            mtirl::parse_grid(text);
            ADD_FAILURE() << "expected bad_grid for: " << text;
        } catch (const ValidationError& e) {
            EXPECT_EQ(e.code(), ValidationError::Code::bad_grid);
        }
    };
    expect_bad("");          // empty input
    expect_bad("dd\nd");     // ragged rows
    expect_bad("dxd");       // unknown character
    expect_bad("##\n##");    // all walls
}

TEST(BuildMdp, OneByOneSelfTransitions) {
    GridSpec grid = mtirl::parse_grid("d");
    TabularMdp mdp = mtirl::build_mdp(grid, canonical_task_a(), 0.9);
    for (int a = 0; a < mtirl::kGridActions; ++a) {
        EXPECT_DOUBLE_EQ(mdp.transitions[a](0, 0), 1.0);
    }
    EXPECT_DOUBLE_EQ(mdp.initial_dist[0], 1.0);
}

TEST(BuildMdp, OpenThreeByThreeCornerRows) {
    // 3x3 all dirt; states are numbered row-major, so state r*3+c is cell (r,c).
    GridSpec grid = mtirl::parse_grid("ddd\nddd\nddd");
    TabularMdp mdp = mtirl::build_mdp(grid, canonical_task_a(), 0.9);

    // Corner (0,0), action up: intended move and the left slip are both
    // blocked (stay), the right slip reaches (0,1).
    Vec row = mdp.transitions[static_cast<int>(Action::up)].row(0).transpose();
    EXPECT_NEAR(row[0], 0.9, 1e-15);
    EXPECT_NEAR(row[1], 0.1, 1e-15);
    EXPECT_NEAR(row.sum(), 1.0, 1e-15);

    // Corner (0,0), action right: intended (0,1), slips up (blocked -> stay)
    // and down (1,0).
    row = mdp.transitions[static_cast<int>(Action::right)].row(0).transpose();
    EXPECT_NEAR(row[1], 0.8, 1e-15);
    EXPECT_NEAR(row[0], 0.1, 1e-15);
    EXPECT_NEAR(row[3], 0.1, 1e-15);

    // Interior (1,1), action up: (0,1) with 0.8, (1,0) and (1,2) with 0.1.
    row = mdp.transitions[static_cast<int>(Action::up)].row(4).transpose();
    EXPECT_NEAR(row[1], 0.8, 1e-15);
    EXPECT_NEAR(row[3], 0.1, 1e-15);
    EXPECT_NEAR(row[5], 0.1, 1e-15);
}

TEST(BuildMdp, SlipEntriesAreSumsOfCanonicalProbabilities) {
    GridSpec grid = mtirl::parse_grid("dd#\nd#d\nddd");
    TabularMdp mdp = mtirl::build_mdp(grid, canonical_task_a(), 0.9);
    for (int a = 0; a < mtirl::kGridActions; ++a) {
        for (int s = 0; s < mdp.n_states; ++s) {
            int support = 0;
            for (int t = 0; t < mdp.n_states; ++t) {
                double p = mdp.transitions[a](s, t);
                if (p == 0.0) continue;
                ++support;
                // Any entry is a sum of components drawn from {0.8, 0.1, 0.1}.
                bool canonical = false;
                for (double v : {0.1, 0.2, 0.8, 0.9, 1.0}) {
                    if (std::abs(p - v) < 1e-12) canonical = true;
                }
                EXPECT_TRUE(canonical) << "entry " << p;
            }
            EXPECT_LE(support, 4);  // at most intended + 2 slips + self
            EXPECT_NEAR(mdp.transitions[a].row(s).sum(), 1.0, 1e-12);
        }
    }
}

TEST(BuildMdp, RewardEqualsTerrainFeaturesDotWeights) {
    GridSpec grid = mtirl::parse_grid("Sgd\n@ld\nddG");
    TaskRewardSpec task = canonical_task_a();
    TabularMdp mdp = mtirl::build_mdp(grid, task, 0.9);
    mtirl::FeatureMap features = mtirl::make_features(grid, mtirl::FeatureKind::terrain);
    const Vec w = task.to_vec();
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mtirl::kGridActions; ++a) {
            double via_features = (features.row(s, a, mtirl::kGridActions) * w).value();
            EXPECT_DOUBLE_EQ((*mdp.reward)(s, a), via_features);
        }
    }
}

TEST(BuildMdp, StartCellsControlInitialDistribution) {
    // With '@' cells, the initial distribution is uniform over them.
    GridSpec with_start = mtirl::parse_grid("d@\n@d");
    TabularMdp mdp = mtirl::build_mdp(with_start, canonical_task_a(), 0.9);
    Vec expect(4);
    expect << 0.0, 0.5, 0.5, 0.0;
    EXPECT_LT((mdp.initial_dist - expect).cwiseAbs().maxCoeff(), 1e-15);

    // Without '@', uniform over every non-wall cell.
    GridSpec uniform = mtirl::parse_grid("dd\n#d");
    mdp = mtirl::build_mdp(uniform, canonical_task_a(), 0.9);
    EXPECT_LT((mdp.initial_dist - Vec::Constant(3, 1.0 / 3.0)).cwiseAbs().maxCoeff(),
              1e-15);
}

TEST(Features, ActionIndependentAndOneHot) {
    GridSpec grid = mtirl::parse_grid("Sgd\n@lG");
    for (auto kind : {mtirl::FeatureKind::terrain, mtirl::FeatureKind::one_hot_state}) {
        mtirl::FeatureMap f = mtirl::make_features(grid, kind);
        for (int s = 0; s < grid.n_states; ++s) {
            for (int a = 1; a < mtirl::kGridActions; ++a) {
                EXPECT_LT((f.row(s, a, mtirl::kGridActions) -
                           f.row(s, 0, mtirl::kGridActions))
                              .cwiseAbs()
                              .maxCoeff(),
                          1e-15);
            }
            EXPECT_DOUBLE_EQ(f.row(s, 0, mtirl::kGridActions).sum(), 1.0);
        }
    }
    // Terrain indicator of a dirt cell is (1,0,0,0,0).
    mtirl::FeatureMap terrain = mtirl::make_features(grid, mtirl::FeatureKind::terrain);
    int dirt_state = grid.state_of_cell[grid.cell_index(1, 0)];  // the '@' cell
    Vec expected = Vec::Zero(mtirl::kTerrainKinds);
    expected[static_cast<int>(Terrain::dirt)] = 1.0;
    EXPECT_LT((terrain.row(dirt_state, 0, mtirl::kGridActions).transpose() - expected)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-15);
    // one_hot_state has K = number of states.
    mtirl::FeatureMap onehot =
        mtirl::make_features(grid, mtirl::FeatureKind::one_hot_state);
    EXPECT_EQ(onehot.k, grid.n_states);
}

// --- Shipped 9x9 fixture ----------------------------------------------------

TEST(Fixture, ParsesWithExpectedStructure) {
    const std::string text = read_file(std::string(MTIRL_FIXTURE_DIR) + "/jungle9.grid");
    GridSpec grid = mtirl::parse_grid(text);
    EXPECT_EQ(grid.n_rows, 9);
    EXPECT_EQ(grid.n_cols, 9);

    int walls = 0, gold = 0, silver = 0, starts = 0, lava = 0;
    for (size_t cell = 0; cell < grid.cells.size(); ++cell) {
        switch (grid.cells[cell]) {
            case Terrain::wall: ++walls; break;
            case Terrain::gold: ++gold; break;
            case Terrain::silver: ++silver; break;
            case Terrain::lava: ++lava; break;
            default: break;
        }
        if (grid.start[cell]) ++starts;
    }
    EXPECT_EQ(gold, 1);
    EXPECT_EQ(silver, 1);
    // Episodes begin uniformly over the start row at the bottom, maximally
    // far from the treasure pocket at the top.
    EXPECT_EQ(starts, 9);
    EXPECT_GE(walls, 2);
    EXPECT_GE(lava, 4);
    EXPECT_EQ(grid.n_states, 81 - walls);

    // All terrain kinds appear, so terrain features span all five categories.
    EXPECT_GT(grid.n_states, 0);
}

TEST(Fixture, MirrorSymmetricWithTreasuresSwapped) {
    // The fixture is symmetric under column reflection combined with swapping
    // gold and silver. This is what makes tasks A and B exactly symmetric.
    const std::string text = read_file(std::string(MTIRL_FIXTURE_DIR) + "/jungle9.grid");
    GridSpec grid = mtirl::parse_grid(text);
    auto swap_treasure = [](Terrain t) {
        if (t == Terrain::gold) return Terrain::silver;
        if (t == Terrain::silver) return Terrain::gold;
        return t;
    };
    for (int r = 0; r < grid.n_rows; ++r) {
        for (int c = 0; c < grid.n_cols; ++c) {
            EXPECT_EQ(grid.terrain_at(r, c),
                      swap_treasure(grid.terrain_at(r, grid.n_cols - 1 - c)))
                << "asymmetry at (" << r << ", " << c << ")";
            EXPECT_EQ(grid.start[grid.cell_index(r, c)],
                      grid.start[grid.cell_index(r, grid.n_cols - 1 - c)]);
        }
    }
}

TEST(Fixture, BuildsValidMdpWithStochasticRows) {
    const std::string text = read_file(std::string(MTIRL_FIXTURE_DIR) + "/jungle9.grid");
    GridSpec grid = mtirl::parse_grid(text);
    TabularMdp mdp = mtirl::build_mdp(grid, canonical_task_a(), 0.95);
    for (int a = 0; a < mtirl::kGridActions; ++a) {
        for (int s = 0; s < mdp.n_states; ++s) {
            EXPECT_NEAR(mdp.transitions[a].row(s).sum(), 1.0, 1e-12);
        }
    }
    // The '@' row pins the initial distribution: uniform over the nine start
    // cells, zero elsewhere.
    EXPECT_NEAR(mdp.initial_dist.maxCoeff(), 1.0 / 9.0, 1e-15);
    EXPECT_NEAR(mdp.initial_dist.minCoeff(), 0.0, 1e-15);
    EXPECT_NEAR(mdp.initial_dist.sum(), 1.0, 1e-12);
}

}  // namespace
