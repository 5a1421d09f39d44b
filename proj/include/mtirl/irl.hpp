#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtirl/demos.hpp"
#include "mtirl/mdp.hpp"
#include "mtirl/soft_planner.hpp"

namespace mtirl {

/// Linear reward induced by a weight vector: R(s, a) = theta . phi(s, a).
inline Mat reward_from_theta(const TabularMdp& mdp, const FeatureMap& features,
                             const Vec& theta) {
    Vec flat = features.table * theta;
    using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajorMat>(flat.data(), mdp.n_states, mdp.n_actions);
}

struct FitOptions {
    double learning_rate = 0.1;      // tuned for one_hot_state gridworld features
    long max_iterations = 1000;
    double gradient_tolerance = 1e-6;  // sup-norm over the full (regularized) gradient
    double planner_tolerance = 1e-10;
    long planner_max_iterations = 100000;
    bool halve_on_decrease = false;  // optional step-halving when the objective drops
    long divergence_patience = 50;   // consecutive decreasing steps before aborting
    bool record_iterates = false;    // keep all per-iteration thetas (test support)
};

struct FitReport {
    long iterations = 0;
    bool converged = false;
    std::vector<double> final_grad_norms;  // sup-norm, one entry per task
    std::vector<double> loss_trace;        // objective per iteration (mean over tasks)
    double wall_seconds = 0.0;
    std::vector<std::vector<Vec>> iterates;  // per task, filled when record_iterates
};

/// Parameters of a multitask fit: one weight vector per task plus their mean
/// (the center the regularizer pulls toward) and the strength used.
struct TaskParams {
    std::vector<Vec> thetas;
    Vec mean;
    double lambda = 0.0;
};

/// Everything the optimizer needs to know about one task: shared dynamics,
/// feature map, and the empirical discounted feature counts of its demos.
struct TaskData {
    const TabularMdp* mdp = nullptr;
    const FeatureMap* features = nullptr;
    Vec demo_counts;
    std::string label;
};

/// Plans and differentiates the MCE objective for one task, reusing the soft
/// value function and occupancy across calls as warm starts. All fitting
/// paths (single, multitask, joint, meta inner loops) step through this one
/// engine so their reductions to each other are exact.
class GradientEngine {
public:
    GradientEngine(const TabularMdp& mdp, const FeatureMap& features, Vec demo_counts,
                   double planner_tol, long planner_max_iter)
        : mdp_(&mdp),
          features_(&features),
          counts_(std::move(demo_counts)),
          planner_tol_(planner_tol),
          planner_max_iter_(planner_max_iter) {}

    struct Eval {
        Vec gradient;      // demo counts - feature expectations under pi_theta
        double objective;  // theta . counts - E_{mu0}[v_soft], the concave
                           // potential whose exact gradient the above is
    };

    Eval evaluate(const Vec& theta) {
        Mat reward = reward_from_theta(*mdp_, *features_, theta);
        SoftPolicy policy =
            soft_value_iteration(*mdp_, reward, planner_tol_, planner_max_iter_,
                                 has_cache_ ? &v_cache_ : nullptr);
        Occupancy occ = occupancy(*mdp_, policy.pi, planner_tol_, planner_max_iter_,
                                  has_cache_ ? &d_cache_ : nullptr);
        v_cache_ = policy.v_soft;
        d_cache_ = occ.rho.rowwise().sum();
        has_cache_ = true;
        Eval out;
        out.gradient = counts_ - feature_expectations(*features_, occ);
        out.objective = counts_.dot(theta) - mdp_->initial_dist.dot(policy.v_soft);
        last_policy_ = std::move(policy);
        return out;
    }

    const SoftPolicy& last_policy() const { return last_policy_; }
    const Vec& demo_counts() const { return counts_; }

private:
    const TabularMdp* mdp_;
    const FeatureMap* features_;
    Vec counts_;
    double planner_tol_;
    long planner_max_iter_;
    Vec v_cache_, d_cache_;
    bool has_cache_ = false;
    SoftPolicy last_policy_;
};

/// Gradient of the MCE log-likelihood objective at theta for the given demo
/// counts: demo_counts - F(pi_theta), with F the discounted feature
/// expectations of the soft policy for reward theta . phi.
inline Vec mce_gradient(const TabularMdp& mdp, const FeatureMap& features,
                        const Vec& theta, const Vec& demo_counts,
                        double planner_tol = 1e-10, long planner_max_iter = 100000) {
    GradientEngine engine(mdp, features, demo_counts, planner_tol, planner_max_iter);
    return engine.evaluate(theta).gradient;
}

/// Regularized variant: adds the pull toward the task mean,
///   grad = demo_counts - F(pi_theta) - lambda (theta - theta_bar).
inline Vec mce_gradient(const TabularMdp& mdp, const FeatureMap& features,
                        const Vec& theta, const Vec& demo_counts, double lambda,
                        const Vec& theta_bar, double planner_tol = 1e-10,
                        long planner_max_iter = 100000) {
    return mce_gradient(mdp, features, theta, demo_counts, planner_tol,
                        planner_max_iter) -
           lambda * (theta - theta_bar);
}

/// The scalar objective the gradient above ascends:
///   theta . demo_counts - E_{s ~ mu0}[v_soft_theta(s)].
/// This is the mean causal log-likelihood of the demos with the transition
/// and initial-state noise integrated out; for deterministic dynamics and a
/// fixed start it equals the mean discounted causal log-likelihood of the
/// trajectories up to the horizon tail.
inline double mce_objective(const TabularMdp& mdp, const FeatureMap& features,
                            const Vec& theta, const Vec& demo_counts,
                            double planner_tol = 1e-10, long planner_max_iter = 100000) {
    GradientEngine engine(mdp, features, demo_counts, planner_tol, planner_max_iter);
    return engine.evaluate(theta).objective;
}

namespace detail {

class WallTimer {
public:
    WallTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Synchronous multitask MCE IRL with a shared-mean Gaussian prior. Ascends,
/// for every task i,
///   L_i = (mean causal log-likelihood of task i's demos)
///         - lambda/2 ||theta_i - theta_bar||^2,
/// where theta_bar is the mean of the current iterates, recomputed every
/// iteration and treated as constant within one (its own dependence on
/// theta_i averages out across the population and is deliberately not
/// differentiated through; the paper's gradient is the operative
/// definition). All thetas start at zero and update simultaneously with a
/// constant learning rate.
///
/// With lambda = 0 the per-task updates are, operation for operation, the
/// same as m independent fit_single runs. Terminates when every per-task
/// gradient sup-norm is within tolerance, or at max_iterations; aborts with
/// DivergenceError after divergence_patience consecutive objective drops.
inline std::pair<TaskParams, FitReport> fit_multitask(const std::vector<TaskData>& tasks,
                                                      double lambda,
                                                      const FitOptions& opts = {}) {
    if (tasks.empty()) {
        throw ValidationError(ValidationError::Code::bad_config, "no tasks to fit");
    }
    const int k = static_cast<int>(tasks.front().features->k);
    for (const TaskData& task : tasks) {
        validate_features(*task.mdp, *task.features);
        if (task.features->k != k || task.demo_counts.size() != k) {
            throw ValidationError(ValidationError::Code::shape_mismatch,
                                  "all tasks must share one feature dimension");
        }
    }
    detail::WallTimer timer;
    const size_t m = tasks.size();
    std::vector<GradientEngine> engines;
    engines.reserve(m);
    for (const TaskData& task : tasks) {
        engines.emplace_back(*task.mdp, *task.features, task.demo_counts,
                             opts.planner_tolerance, opts.planner_max_iterations);
    }

    TaskParams params;
    params.lambda = lambda;
    params.thetas.assign(m, Vec::Zero(k));
    FitReport report;
    report.final_grad_norms.assign(m, std::numeric_limits<double>::infinity());
    if (opts.record_iterates) report.iterates.assign(m, {});

    double lr = opts.learning_rate;
    long decreasing_run = 0;
    std::vector<Vec> grads(m);
    for (long it = 0; it < opts.max_iterations; ++it) {
        Vec mean = Vec::Zero(k);
        for (const Vec& theta : params.thetas) mean += theta;
        mean /= static_cast<double>(m);
        params.mean = mean;

        double objective_sum = 0.0;
        double worst_norm = 0.0;
        for (size_t i = 0; i < m; ++i) {
            GradientEngine::Eval eval = engines[i].evaluate(params.thetas[i]);
            grads[i] = std::move(eval.gradient);
            double objective = eval.objective;
            if (lambda != 0.0) {
                Vec pull = params.thetas[i] - mean;
                grads[i] -= lambda * pull;
                objective -= 0.5 * lambda * pull.squaredNorm();
            }
            report.final_grad_norms[i] = grads[i].cwiseAbs().maxCoeff();
            worst_norm = std::max(worst_norm, report.final_grad_norms[i]);
            objective_sum += objective;
        }
        double objective = objective_sum / static_cast<double>(m);
        report.iterations = it;
        if (worst_norm <= opts.gradient_tolerance) {
            report.converged = true;
            break;
        }
        if (!report.loss_trace.empty() && objective < report.loss_trace.back()) {
            if (++decreasing_run >= opts.divergence_patience) {
                throw DivergenceError(
                    "fit diverged: objective decreased for " +
                        std::to_string(decreasing_run) +
                        " consecutive iterations (last " + std::to_string(objective) +
                        "); lower the learning rate or enable halve_on_decrease",
                    it);
            }
            if (opts.halve_on_decrease) lr *= 0.5;
        } else {
            decreasing_run = 0;
        }
        report.loss_trace.push_back(objective);

        for (size_t i = 0; i < m; ++i) {
            params.thetas[i] += lr * grads[i];
            if (opts.record_iterates) report.iterates[i].push_back(params.thetas[i]);
        }
        report.iterations = it + 1;
    }

    Vec mean = Vec::Zero(k);
    for (const Vec& theta : params.thetas) mean += theta;
    params.mean = mean / static_cast<double>(m);
    report.wall_seconds = timer.seconds();
    return {std::move(params), std::move(report)};
}

/// Single-task MCE IRL: gradient ascent on the unregularized objective.
/// Identical stepping to fit_multitask with one task and lambda = 0.
inline std::pair<Vec, FitReport> fit_single(const TabularMdp& mdp,
                                            const FeatureMap& features,
                                            const Vec& demo_counts,
                                            const FitOptions& opts = {}) {
    TaskData task{&mdp, &features, demo_counts, "single"};
    auto [params, report] = fit_multitask({task}, 0.0, opts);
    return {std::move(params.thetas.front()), std::move(report)};
}

inline std::pair<Vec, FitReport> fit_single(const TabularMdp& mdp,
                                            const FeatureMap& features,
                                            const DemoSet& demos,
                                            const FitOptions& opts = {}) {
    return fit_single(mdp, features,
                      empirical_feature_counts(demos, features, mdp.discount,
                                               mdp.n_actions),
                      opts);
}

/// Joint baseline: pools every demo set into one and runs a single-task fit
/// on the pooled counts (the trajectory-count-weighted average of the
/// per-set counts). The result is one shared theta for all tasks.
inline std::pair<Vec, FitReport> fit_joint_baseline(const TabularMdp& mdp,
                                                    const FeatureMap& features,
                                                    const std::vector<const DemoSet*>& sets,
                                                    const FitOptions& opts = {}) {
    if (sets.empty()) {
        throw ValidationError(ValidationError::Code::bad_config,
                              "joint baseline needs at least one demo set");
    }
    Vec pooled = Vec::Zero(features.k);
    long total = 0;
    for (const DemoSet* demos : sets) {
        pooled += static_cast<double>(demos->size()) *
                  empirical_feature_counts(*demos, features, mdp.discount, mdp.n_actions);
        total += demos->size();
    }
    pooled /= static_cast<double>(total);
    return fit_single(mdp, features, pooled, opts);
}

}  // namespace mtirl
