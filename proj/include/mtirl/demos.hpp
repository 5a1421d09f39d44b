#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtirl/mdp.hpp"
#include "mtirl/rng.hpp"
#include "mtirl/soft_planner.hpp"

namespace mtirl {

/// One demonstration: a state-action sequence of horizon+1 pairs. The final
/// state also carries a sampled action, so a horizon-H trajectory has H
/// transitions and H+1 (s, a) pairs.
struct Trajectory {
    std::vector<std::pair<int, int>> steps;

    int length() const { return static_cast<int>(steps.size()); }
};

/// A set of demonstrations for a single task, all of identical horizon,
/// tagged with the seed that generated them.
struct DemoSet {
    std::string task_label;
    std::vector<Trajectory> trajectories;
    int horizon = 0;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(trajectories.size()); }
};

/// Samples `n` trajectories of the given horizon from policy `pi` in `mdp`.
/// A single generator seeded with `seed` drives the whole set; the draw
/// order (initial state, then per step action followed by successor) is part
/// of the format contract, so identical inputs give identical sets.
inline DemoSet sample_trajectories(const TabularMdp& mdp, const Mat& pi, int n,
                                   int horizon, std::uint64_t seed,
                                   const std::string& task_label) {
    if (n <= 0 || horizon < 0) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "demo sampling needs n >= 1 and horizon >= 0");
    }
    DemoSet demos;
    demos.task_label = task_label;
    demos.horizon = horizon;
    demos.seed = seed;
    demos.trajectories.reserve(n);
    Rng rng(seed);
    for (int j = 0; j < n; ++j) {
        Trajectory traj;
        traj.steps.reserve(horizon + 1);
        int s = rng.categorical(mdp.initial_dist);
        for (int t = 0; t <= horizon; ++t) {
            int a = rng.categorical(pi.row(s).transpose());
            traj.steps.emplace_back(s, a);
            if (t < horizon) {
                s = rng.categorical(mdp.transitions[a].row(s).transpose());
            }
        }
        demos.trajectories.push_back(std::move(traj));
    }
    return demos;
}

/// Mean discounted feature count over the demo set:
///   (1/N) sum_j sum_t gamma^t phi(s_t, a_t).
inline Vec empirical_feature_counts(const DemoSet& demos, const FeatureMap& features,
                                    double discount, int n_actions) {
    if (demos.trajectories.empty()) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "cannot compute feature counts of an empty demo set");
    }
    Vec counts = Vec::Zero(features.k);
    for (const Trajectory& traj : demos.trajectories) {
        double scale = 1.0;
        for (const auto& [s, a] : traj.steps) {
            counts += scale * features.table.row(static_cast<long>(s) * n_actions + a);
            scale *= discount;
        }
    }
    return counts / static_cast<double>(demos.trajectories.size());
}

/// Concatenation of two demo sets; feature counts of the result are the
/// trajectory-count-weighted average of the inputs' counts.
inline DemoSet concat(const DemoSet& a, const DemoSet& b) {
    DemoSet merged;
    merged.task_label = a.task_label == b.task_label
                            ? a.task_label
                            : a.task_label + "|" + b.task_label;
    merged.horizon = a.horizon;
    merged.seed = a.seed;
    merged.trajectories = a.trajectories;
    merged.trajectories.insert(merged.trajectories.end(), b.trajectories.begin(),
                               b.trajectories.end());
    return merged;
}

/// Keeps the first `m` trajectories (the standard protocol for evaluating a
/// method at a smaller demo budget from one generated pool).
inline DemoSet prefix(const DemoSet& demos, int m) {
    if (m <= 0 || m > demos.size()) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "prefix size out of range");
    }
    DemoSet out = demos;
    out.trajectories.resize(m);
    return out;
}

inline double trajectory_log_likelihood(const Mat& pi, const Trajectory& traj,
                                        double discount = 1.0) {
    return trajectory_log_likelihood(pi, traj.steps, discount);
}

// --- Serialization -------------------------------------------------------
//
// Text format, one file per demo set:
//
//   # demoset v1
//   task_label A
//   horizon 70
//   seed 42
//   n 200
//   traj s0 a0 s1 a1 ... sH aH      (one line per trajectory)
//
// Integers only, so identical sets serialize to identical bytes.

inline void save_demos(std::ostream& out, const DemoSet& demos) {
    if (demos.task_label.empty() ||
        demos.task_label.find_first_of(" \t\n\r") != std::string::npos) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "task label must be non-empty without whitespace");
    }
    out << "# demoset v1\n";
    out << "task_label " << demos.task_label << "\n";
    out << "horizon " << demos.horizon << "\n";
    out << "seed " << demos.seed << "\n";
    out << "n " << demos.trajectories.size() << "\n";
    for (const Trajectory& traj : demos.trajectories) {
        out << "traj";
        for (const auto& [s, a] : traj.steps) out << ' ' << s << ' ' << a;
        out << '\n';
    }
}

inline void save_demos(const std::string& path, const DemoSet& demos) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "cannot open for writing: " + path);
    }
    save_demos(out, demos);
}

namespace detail {

inline std::string expect_field(std::istream& in, const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "demo file truncated before field '" + key + "'");
    }
    std::istringstream ls(line);
    std::string name, value;
    ls >> name >> value;
    if (name != key || value.empty()) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "expected field '" + key + "', got line: " + line);
    }
    return value;
}

}  // namespace detail

inline DemoSet load_demos(std::istream& in) {
    std::string magic;
    std::getline(in, magic);
    if (magic != "# demoset v1") {
        throw ValidationError(ValidationError::Code::bad_file,
                              "not a demoset v1 file");
    }
    DemoSet demos;
    demos.task_label = detail::expect_field(in, "task_label");
    demos.horizon = std::stoi(detail::expect_field(in, "horizon"));
    demos.seed = std::stoull(detail::expect_field(in, "seed"));
    long n = std::stol(detail::expect_field(in, "n"));
    if (demos.horizon < 0 || n <= 0) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "demo file header has non-positive horizon or count");
    }
    demos.trajectories.reserve(n);
    for (long j = 0; j < n; ++j) {
        std::string line;
        if (!std::getline(in, line)) {
            throw ValidationError(ValidationError::Code::bad_file,
                                  "demo file truncated: expected " + std::to_string(n) +
                                      " trajectories");
        }
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag != "traj") {
            throw ValidationError(ValidationError::Code::bad_file,
                                  "malformed trajectory line: " + line);
        }
        Trajectory traj;
        traj.steps.reserve(demos.horizon + 1);
        int s = 0, a = 0;
        while (ls >> s >> a) {
            if (s < 0 || a < 0) {
                throw ValidationError(ValidationError::Code::bad_file,
                                      "negative state or action index in demo file");
            }
            traj.steps.emplace_back(s, a);
        }
        if (traj.length() != demos.horizon + 1) {
            throw ValidationError(ValidationError::Code::bad_file,
                                  "trajectory length disagrees with header horizon");
        }
        demos.trajectories.push_back(std::move(traj));
    }
    return demos;
}

inline DemoSet load_demos(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(ValidationError::Code::bad_file,
                              "cannot open demo file: " + path);
    }
    return load_demos(in);
}

}  // namespace mtirl
