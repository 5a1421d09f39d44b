#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtirl/irl.hpp"
#include "mtirl/rng.hpp"

namespace mtirl {

struct ReptileOptions {
    long outer_iterations = 40;        // T
    long inner_steps = 5;              // N gradient steps per sampled task
    double outer_learning_rate = 0.5;  // alpha, the interpolation weight
    double inner_learning_rate = 0.1;
    double planner_tolerance = 1e-10;
    long planner_max_iterations = 100000;
    bool record_history = true;
};

/// Meta-initialization state produced by Reptile: the current phi, the outer
/// hyperparameters, and a trace of each outer step's task and inner-loop
/// start/end parameters.
struct MetaState {
    Vec phi;
    double outer_lr = 0.0;
    long inner_steps = 0;

    struct OuterRecord {
        int task_index;
        Vec theta_start;  // phi before the step
        Vec theta_end;    // inner-loop result the step interpolates toward
    };
    std::vector<OuterRecord> history;
};

/// Reptile over a family of IRL tasks. Each outer step samples a task
/// uniformly (seeded), runs `inner_steps` plain MCE gradient-ascent steps
/// from the current phi on that task's demo counts, and interpolates
///   phi <- (1 - alpha) phi + alpha theta_N.
/// The update is written in convex-combination form so alpha = 1 copies
/// theta_N exactly and alpha = 0 leaves phi untouched, bit for bit. Inner
/// steps go through the same GradientEngine stepping as fit_single, with
/// per-task engines persisting across outer steps, so a single-task run at
/// alpha = 1 is exactly fit_single for T * N steps.
inline MetaState reptile_meta(const std::vector<TaskData>& tasks,
                              const ReptileOptions& opts, std::uint64_t seed) {
    if (tasks.empty()) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "reptile needs at least one task");
    }
    const int k = tasks.front().features->k;
    std::vector<GradientEngine> engines;
    engines.reserve(tasks.size());
    for (const TaskData& task : tasks) {
        validate_features(*task.mdp, *task.features);
        if (task.features->k != k || task.demo_counts.size() != k) {
            throw ValidationError(ValidationError::Code::shape_mismatch,
                                  "all meta tasks must share one feature dimension");
        }
        engines.emplace_back(*task.mdp, *task.features, task.demo_counts,
                             opts.planner_tolerance, opts.planner_max_iterations);
    }

    MetaState state;
    state.phi = Vec::Zero(k);
    state.outer_lr = opts.outer_learning_rate;
    state.inner_steps = opts.inner_steps;
    Rng rng(seed);
    const double alpha = opts.outer_learning_rate;
    for (long t = 0; t < opts.outer_iterations; ++t) {
        int i = static_cast<int>(rng.uniform01() * static_cast<double>(tasks.size()));
        if (i >= static_cast<int>(tasks.size())) i = static_cast<int>(tasks.size()) - 1;

        Vec theta = state.phi;
        for (long n = 0; n < opts.inner_steps; ++n) {
            theta += opts.inner_learning_rate * engines[i].evaluate(theta).gradient;
        }
        if (opts.record_history) {
            state.history.push_back(MetaState::OuterRecord{i, state.phi, theta});
        }
        state.phi = (1.0 - alpha) * state.phi + alpha * theta;
    }
    return state;
}

/// Adapts an initialization to a new task: `steps` plain MCE gradient-ascent
/// steps from `init` on the task's demo counts. steps = 0 returns the
/// initialization unchanged.
inline Vec finetune(const Vec& init, const TabularMdp& mdp, const FeatureMap& features,
                    const Vec& demo_counts, long steps, double learning_rate = 0.1,
                    double planner_tol = 1e-10, long planner_max_iter = 100000) {
    validate_features(mdp, features);
    if (init.size() != features.k || demo_counts.size() != features.k) {
        throw ValidationError(ValidationError::Code::shape_mismatch,
                              "finetune init/counts must match the feature dimension");
    }
    GradientEngine engine(mdp, features, demo_counts, planner_tol, planner_max_iter);
    Vec theta = init;
    for (long n = 0; n < steps; ++n) {
        theta += learning_rate * engine.evaluate(theta).gradient;
    }
    return theta;
}

inline Vec finetune(const MetaState& state, const TabularMdp& mdp,
                    const FeatureMap& features, const DemoSet& demos, long steps,
                    double learning_rate = 0.1, double planner_tol = 1e-10,
                    long planner_max_iter = 100000) {
    return finetune(state.phi, mdp, features,
                    empirical_feature_counts(demos, features, mdp.discount,
                                             mdp.n_actions),
                    steps, learning_rate, planner_tol, planner_max_iter);
}

}  // namespace mtirl
