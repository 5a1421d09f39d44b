// Tests for the MCE IRL fitting layer: gradient/objective consistency against
// finite differences, single-task recovery, the multitask regularizer's update
// rule, and the pooled joint baseline. Oracles are finite differences and
// exact planner quantities; none reuse the gradient code under test.
#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtirl/demos.hpp"
#include "mtirl/errors.hpp"
#include "mtirl/gridworld.hpp"
#include "mtirl/irl.hpp"
#include "mtirl/mdp.hpp"
#include "mtirl/soft_planner.hpp"
#include "oracles.hpp"

namespace {

using mtirl::DemoSet;
using mtirl::FeatureMap;
using mtirl::FitOptions;
using mtirl::Mat;
using mtirl::TabularMdp;
using mtirl::TaskData;
using mtirl::ValidationError;
using mtirl::Vec;

double rel_sup_error(const Vec& approx, const Vec& exact) {
    double denom = std::max(1.0, exact.cwiseAbs().maxCoeff());
    return (approx - exact).cwiseAbs().maxCoeff() / denom;
}

// Exact discounted feature expectations of the soft policy for `theta`.
Vec soft_feature_expectations(const TabularMdp& mdp, const FeatureMap& features,
                              const Vec& theta) {
    Mat reward = mtirl::reward_from_theta(mdp, features, theta);
    mtirl::SoftPolicy policy = mtirl::soft_value_iteration(mdp, reward, 1e-12);
    return mtirl::feature_expectations(features, mtirl::occupancy(mdp, policy.pi, 1e-12));
}

// ---------------------------------------------------------------------------
// Gradient and objective consistency
// ---------------------------------------------------------------------------

TEST(IrlGradient, FdOfObjectiveMatchesAnalyticOnStochasticMdp) {
    for (std::uint64_t seed : {3u, 14u, 59u}) {
        TabularMdp mdp = oracles::random_mdp(4, 3, 0.9, seed);
        FeatureMap features = oracles::random_features(4, 3, 5, seed + 100);
        // Achievable demo counts: exact expectations under a random expert.
        Vec counts =
            soft_feature_expectations(mdp, features, oracles::random_theta(5, seed + 200, 1.5));
        Vec theta = oracles::random_theta(5, seed + 300, 1.0);

        Vec analytic = mtirl::mce_gradient(mdp, features, theta, counts, 1e-12, 200000);
        Vec fd = oracles::fd_gradient(
            [&](const Vec& t) {
                return mtirl::mce_objective(mdp, features, t, counts, 1e-12, 200000);
            },
            theta);
        EXPECT_LT(rel_sup_error(fd, analytic), 1e-5) << "seed " << seed;
    }
}

// With deterministic dynamics and a fixed start state, the objective equals
// the demos' mean discounted causal log-likelihood up to a gamma^{H+1} tail,
// so the analytic gradient must match a finite difference of that
// likelihood computed directly from the trajectories.
TEST(IrlGradient, FdOfDemoLogLikelihoodMatchesAnalytic) {
    const double gamma = 0.9;
    const int horizon = 132;  // gamma^horizon < 1e-6 keeps the tail below tolerance
    TabularMdp mdp = oracles::random_mdp(4, 3, gamma, 71, /*point_start=*/true,
                                         /*deterministic_transitions=*/true);
    FeatureMap features = oracles::random_features(4, 3, 5, 72);
    mtirl::SoftPolicy expert = mtirl::soft_value_iteration(
        mdp, mtirl::reward_from_theta(mdp, features, oracles::random_theta(5, 73, 1.5)),
        1e-12);
    DemoSet demos = mtirl::sample_trajectories(mdp, expert.pi, 100, horizon, 74, "fd");
    Vec counts = mtirl::empirical_feature_counts(demos, features, gamma, mdp.n_actions);

    auto mean_log_lik = [&](const Vec& theta) {
        mtirl::SoftPolicy policy = mtirl::soft_value_iteration(
            mdp, mtirl::reward_from_theta(mdp, features, theta), 1e-12);
        double total = 0.0;
        for (const mtirl::Trajectory& traj : demos.trajectories) {
            total += mtirl::trajectory_log_likelihood(policy.pi, traj, gamma);
        }
        return total / static_cast<double>(demos.size());
    };

    Vec theta = oracles::random_theta(5, 75, 1.0);
    Vec analytic = mtirl::mce_gradient(mdp, features, theta, counts, 1e-12, 200000);
    Vec fd = oracles::fd_gradient(mean_log_lik, theta);
    EXPECT_LT(rel_sup_error(fd, analytic), 1e-4);
}

TEST(IrlGradient, RegularizedGradientMatchesFdOfPenalizedObjective) {
    TabularMdp mdp = oracles::random_mdp(4, 3, 0.9, 81);
    FeatureMap features = oracles::random_features(4, 3, 5, 82);
    Vec counts = oracles::random_theta(5, 83, 3.0);
    const double lambda = 0.7;
    Vec theta_bar = oracles::random_theta(5, 84, 1.0);
    Vec theta = oracles::random_theta(5, 85, 1.0);

    Vec analytic =
        mtirl::mce_gradient(mdp, features, theta, counts, lambda, theta_bar, 1e-12, 200000);
    Vec fd = oracles::fd_gradient(
        [&](const Vec& t) {
            return mtirl::mce_objective(mdp, features, t, counts, 1e-12, 200000) -
                   0.5 * lambda * (t - theta_bar).squaredNorm();
        },
        theta);
    EXPECT_LT(rel_sup_error(fd, analytic), 1e-5);

    // The overload is exactly the plain gradient minus the pull term.
    Vec plain = mtirl::mce_gradient(mdp, features, theta, counts, 1e-12, 200000);
    Vec expected = plain - lambda * (theta - theta_bar);
    EXPECT_LT((analytic - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IrlGradient, WarmStartedEngineMatchesFreshEvaluations) {
    TabularMdp mdp = oracles::random_mdp(6, 2, 0.95, 91);
    FeatureMap features = oracles::random_features(6, 2, 4, 92);
    Vec counts = oracles::random_theta(4, 93, 2.0);
    mtirl::GradientEngine warm(mdp, features, counts, 1e-12, 200000);
    for (int step = 0; step < 5; ++step) {
        Vec theta = oracles::random_theta(4, 100 + static_cast<std::uint64_t>(step), 1.0);
        mtirl::GradientEngine::Eval warm_eval = warm.evaluate(theta);
        mtirl::GradientEngine fresh(mdp, features, counts, 1e-12, 200000);
        mtirl::GradientEngine::Eval fresh_eval = fresh.evaluate(theta);
        EXPECT_LT((warm_eval.gradient - fresh_eval.gradient).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_NEAR(warm_eval.objective, fresh_eval.objective, 1e-8);
    }
}

// ---------------------------------------------------------------------------
// Single-task fitting
// ---------------------------------------------------------------------------

TEST(FitSingle, UniformCountsConvergeImmediatelyAtZeroInit) {
    // theta = 0 already moment-matches the expectations of the uniform
    // policy, so the fit must converge at iteration zero.
    TabularMdp mdp = oracles::random_mdp(5, 3, 0.9, 111);
    FeatureMap features = oracles::random_features(5, 3, 4, 112);
    Mat uniform = Mat::Constant(5, 3, 1.0 / 3.0);
    Vec counts = mtirl::feature_expectations(features, mtirl::occupancy(mdp, uniform, 1e-12));
    FitOptions opts;
    opts.gradient_tolerance = 1e-8;
    auto [theta, report] = mtirl::fit_single(mdp, features, counts, opts);
    EXPECT_TRUE(report.converged);
    EXPECT_EQ(report.iterations, 0);
    EXPECT_LT(theta.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FitSingle, RecoversSoftExpertPolicyFromExactCounts) {
    TabularMdp mdp = oracles::random_mdp(5, 3, 0.9, 115);
    FeatureMap features = oracles::random_features(5, 3, 4, 116);
    Vec expert_theta = oracles::random_theta(4, 117, 1.0);
    Mat expert_reward = mtirl::reward_from_theta(mdp, features, expert_theta);
    mtirl::SoftPolicy expert = mtirl::soft_value_iteration(mdp, expert_reward, 1e-12);
    Vec counts = soft_feature_expectations(mdp, features, expert_theta);

    FitOptions opts;
    opts.learning_rate = 0.05;
    opts.max_iterations = 8000;
    opts.gradient_tolerance = 1e-8;
    opts.planner_tolerance = 1e-12;
    auto [theta, report] = mtirl::fit_single(mdp, features, counts, opts);
    ASSERT_TRUE(report.converged);
    mtirl::SoftPolicy learned = mtirl::soft_value_iteration(
        mdp, mtirl::reward_from_theta(mdp, features, theta), 1e-12);
    EXPECT_LT((learned.pi - expert.pi).cwiseAbs().maxCoeff(), 0.02);
    // Moment matching holds at the solution.
    EXPECT_LT((soft_feature_expectations(mdp, features, theta) - counts).cwiseAbs().maxCoeff(),
              1e-6);
}

TEST(FitSingle, GridworldRewardRecoveryFromSampledDemos) {
    const std::string map =
        "Sgddd\n"
        "ddddd\n"
        "dd@dd\n"
        "ddddd\n"
        "dddgG\n";
    mtirl::GridSpec grid = mtirl::parse_grid(map);
    mtirl::TaskRewardSpec task;
    task.grass = -1.0;
    task.lava = -10.0;
    task.silver = 5.0;
    task.gold = 0.0;
    const double gamma = 0.9;
    TabularMdp mdp = mtirl::build_mdp(grid, task, gamma);
    FeatureMap features = mtirl::make_features(grid, mtirl::FeatureKind::one_hot_state);
    const Mat& true_reward = *mdp.reward;

    mtirl::SoftPolicy expert = mtirl::soft_value_iteration(mdp, true_reward, 1e-12);
    const int horizon = 131;  // 0.9^131 < 1e-6
    DemoSet demos = mtirl::sample_trajectories(mdp, expert.pi, 1000, horizon, 2024, "a");
    Vec counts = mtirl::empirical_feature_counts(demos, features, gamma, mdp.n_actions);

    FitOptions opts;
    opts.max_iterations = 1500;
    opts.gradient_tolerance = 1e-3;  // below this lies sampling noise
    auto [theta, report] = mtirl::fit_single(mdp, features, counts, opts);

    mtirl::ViResult vi_true = mtirl::value_iteration(mdp, true_reward);
    mtirl::ViResult vi_learned =
        mtirl::value_iteration(mdp, mtirl::reward_from_theta(mdp, features, theta));
    std::vector<int> learned_greedy = mtirl::greedy_policy(vi_learned.q);
    double learned_value = mtirl::policy_value(mdp, true_reward, learned_greedy);
    double optimal_value = mdp.initial_dist.dot(vi_true.v);
    EXPECT_GT(learned_value, 0.95 * optimal_value);

    // On every state the expert visits appreciably (where the one-hot counts
    // are well estimated), the learned greedy action is optimal or tied under
    // the true action values. Barely-visited states may flip on noise.
    mtirl::Occupancy expert_occ = mtirl::occupancy(mdp, expert.pi, 1e-12);
    int checked = 0;
    for (int s = 0; s < mdp.n_states; ++s) {
        if (expert_occ.rho.row(s).sum() < 0.1) continue;
        ++checked;
        EXPECT_GE(vi_true.q(s, learned_greedy[s]), vi_true.v[s] - 1e-6) << "state " << s;
    }
    EXPECT_GE(checked, 8);  // the silver-bound corridor is well visited
}

TEST(FitSingle, LossTraceIsMonotoneAtSmallLearningRate) {
    TabularMdp mdp = oracles::random_mdp(5, 3, 0.9, 121);
    FeatureMap features = oracles::random_features(5, 3, 4, 122);
    Vec counts = soft_feature_expectations(mdp, features, oracles::random_theta(4, 123, 1.5));
    FitOptions opts;
    opts.learning_rate = 0.01;
    opts.max_iterations = 300;
    opts.gradient_tolerance = 1e-12;
    auto [theta, report] = mtirl::fit_single(mdp, features, counts, opts);
    ASSERT_GE(report.loss_trace.size(), 2u);
    for (size_t i = 1; i < report.loss_trace.size(); ++i) {
        EXPECT_GE(report.loss_trace[i], report.loss_trace[i - 1] - 1e-12) << "at " << i;
    }
}

TEST(FitSingle, DivergesWithOversizedLearningRate) {
    // Single state, two actions, phi = [a == 1]. The objective reduces to
    // f(theta) = 7 theta - (1/(1-gamma)) lse(0, theta), whose ascent with
    // lr = 5 overshoots into a widening oscillation: f drops on three
    // consecutive steps, which must trip the divergence guard.
    TabularMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 2;
    mdp.discount = 0.9;
    mdp.transitions = {Mat::Ones(1, 1), Mat::Ones(1, 1)};
    mdp.initial_dist = Vec::Ones(1);
    FeatureMap features;
    features.k = 1;
    features.table = Mat::Zero(2, 1);
    features.table(1, 0) = 1.0;  // only action 1 carries the feature
    Vec counts = Vec::Constant(1, 7.0);  // feasible: F ranges over (0, 10)

    FitOptions opts;
    opts.learning_rate = 5.0;
    opts.max_iterations = 100;
    opts.divergence_patience = 3;
    EXPECT_THROW(mtirl::fit_single(mdp, features, counts, opts), mtirl::DivergenceError);
}

TEST(FitSingle, ReportShapesFollowIterationCount) {
    TabularMdp mdp = oracles::random_mdp(4, 2, 0.9, 141);
    FeatureMap features = oracles::random_features(4, 2, 3, 142);
    Vec counts = soft_feature_expectations(mdp, features, oracles::random_theta(3, 143, 1.0));
    FitOptions opts;
    opts.max_iterations = 7;
    opts.gradient_tolerance = 0.0;  // force running the full budget
    opts.record_iterates = true;
    auto [theta, report] = mtirl::fit_single(mdp, features, counts, opts);
    EXPECT_FALSE(report.converged);
    EXPECT_EQ(report.iterations, 7);
    EXPECT_EQ(report.loss_trace.size(), 7u);
    ASSERT_EQ(report.iterates.size(), 1u);
    EXPECT_EQ(report.iterates[0].size(), 7u);
    EXPECT_EQ(report.final_grad_norms.size(), 1u);
    // The returned theta is the last recorded iterate.
    EXPECT_EQ((theta - report.iterates[0].back()).cwiseAbs().maxCoeff(), 0.0);
}

// ---------------------------------------------------------------------------
// Multitask fitting
// ---------------------------------------------------------------------------

struct TwoTaskSetup {
    TabularMdp mdp;
    FeatureMap features;
    Vec counts_a, counts_b;
    TaskData task_a, task_b;

    explicit TwoTaskSetup(std::uint64_t seed) {
        mdp = oracles::random_mdp(5, 3, 0.9, seed);
        features = oracles::random_features(5, 3, 4, seed + 1);
        counts_a = soft_feature_expectations(mdp, features,
                                             oracles::random_theta(4, seed + 2, 1.5));
        counts_b = soft_feature_expectations(mdp, features,
                                             oracles::random_theta(4, seed + 3, 1.5));
        task_a = TaskData{&mdp, &features, counts_a, "a"};
        task_b = TaskData{&mdp, &features, counts_b, "b"};
    }
};

TEST(FitMultitask, LambdaZeroMatchesIndependentSingleFitsBitForBit) {
    TwoTaskSetup setup(151);
    FitOptions opts;
    opts.max_iterations = 60;
    opts.gradient_tolerance = 1e-12;
    auto [params, report] = mtirl::fit_multitask({setup.task_a, setup.task_b}, 0.0, opts);
    auto [single_a, report_a] = mtirl::fit_single(setup.mdp, setup.features, setup.counts_a, opts);
    auto [single_b, report_b] = mtirl::fit_single(setup.mdp, setup.features, setup.counts_b, opts);
    ASSERT_EQ(params.thetas.size(), 2u);
    EXPECT_EQ((params.thetas[0] - single_a).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((params.thetas[1] - single_b).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FitMultitask, IdenticalTasksShareIdenticalIterates) {
    TwoTaskSetup setup(161);
    FitOptions opts;
    opts.max_iterations = 40;
    opts.gradient_tolerance = 1e-12;
    auto [params, report] =
        mtirl::fit_multitask({setup.task_a, setup.task_a, setup.task_a}, 0.1, opts);
    ASSERT_EQ(params.thetas.size(), 3u);
    EXPECT_EQ((params.thetas[0] - params.thetas[1]).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((params.thetas[0] - params.thetas[2]).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT((params.mean - params.thetas[0]).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FitMultitask, LargeLambdaCollapsesTasksTowardPooledFit) {
    TwoTaskSetup setup(171);
    FitOptions loose;
    loose.max_iterations = 400;
    loose.gradient_tolerance = 1e-8;
    auto [free_params, free_report] =
        mtirl::fit_multitask({setup.task_a, setup.task_b}, 0.0, loose);
    double free_spread =
        (free_params.thetas[0] - free_params.thetas[1]).cwiseAbs().maxCoeff();

    FitOptions tight;
    tight.learning_rate = 0.005;  // keep lr * lambda stable
    tight.max_iterations = 4000;
    tight.gradient_tolerance = 1e-6;
    auto [reg_params, reg_report] =
        mtirl::fit_multitask({setup.task_a, setup.task_b}, 100.0, tight);
    double reg_spread = (reg_params.thetas[0] - reg_params.thetas[1]).cwiseAbs().maxCoeff();

    EXPECT_GT(free_spread, 1e-2);  // the tasks genuinely differ
    EXPECT_LT(reg_spread, 0.05 * free_spread);

    // In the stiff limit both tasks approach the fit on the averaged counts.
    Vec pooled_counts = 0.5 * (setup.counts_a + setup.counts_b);
    FitOptions pooled_opts;
    pooled_opts.max_iterations = 4000;
    pooled_opts.gradient_tolerance = 1e-8;
    auto [pooled, pooled_report] =
        mtirl::fit_single(setup.mdp, setup.features, pooled_counts, pooled_opts);
    double scale = std::max(1.0, pooled.cwiseAbs().maxCoeff());
    EXPECT_LT((reg_params.mean - pooled).cwiseAbs().maxCoeff(), 0.15 * scale);
}

TEST(FitMultitask, UpdateRuleMatchesManualReplay) {
    TwoTaskSetup setup(181);
    const double lambda = 0.5;
    FitOptions opts;
    opts.learning_rate = 0.05;
    opts.max_iterations = 6;
    opts.gradient_tolerance = 1e-15;
    opts.planner_tolerance = 1e-12;
    opts.record_iterates = true;
    auto [params, report] = mtirl::fit_multitask({setup.task_a, setup.task_b}, lambda, opts);
    ASSERT_EQ(report.iterates[0].size(), 6u);

    Vec th_a = Vec::Zero(4), th_b = Vec::Zero(4);
    for (int t = 0; t < 6; ++t) {
        Vec mean = 0.5 * (th_a + th_b);
        Vec g_a = mtirl::mce_gradient(setup.mdp, setup.features, th_a, setup.counts_a, lambda,
                                      mean, 1e-12, 200000);
        Vec g_b = mtirl::mce_gradient(setup.mdp, setup.features, th_b, setup.counts_b, lambda,
                                      mean, 1e-12, 200000);
        th_a += opts.learning_rate * g_a;
        th_b += opts.learning_rate * g_b;
        EXPECT_LT((report.iterates[0][t] - th_a).cwiseAbs().maxCoeff(), 1e-6) << "iter " << t;
        EXPECT_LT((report.iterates[1][t] - th_b).cwiseAbs().maxCoeff(), 1e-6) << "iter " << t;
    }
}

TEST(FitMultitask, RejectsEmptyAndMismatchedTasks) {
    try {
        mtirl::fit_multitask({}, 0.0);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.code(), ValidationError::Code::bad_config);
    }

    TwoTaskSetup setup(191);
    FeatureMap narrow = oracles::random_features(5, 3, 2, 192);
    Vec narrow_counts = Vec::Zero(2);
    TaskData bad{&setup.mdp, &narrow, narrow_counts, "bad"};
    try {
        mtirl::fit_multitask({setup.task_a, bad}, 0.0);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.code(), ValidationError::Code::shape_mismatch);
    }
}

// ---------------------------------------------------------------------------
// Joint baseline
// ---------------------------------------------------------------------------

TEST(FitJoint, SingleSetMatchesFitSingleBitForBit) {
    TabularMdp mdp = oracles::random_mdp(5, 3, 0.9, 201);
    FeatureMap features = oracles::random_features(5, 3, 4, 202);
    mtirl::SoftPolicy expert = mtirl::soft_value_iteration(
        mdp, mtirl::reward_from_theta(mdp, features, oracles::random_theta(4, 203, 1.0)),
        1e-12);
    DemoSet demos = mtirl::sample_trajectories(mdp, expert.pi, 20, 60, 204, "only");
    FitOptions opts;
    opts.max_iterations = 50;
    opts.gradient_tolerance = 1e-12;
    auto [joint_theta, joint_report] = mtirl::fit_joint_baseline(mdp, features, {&demos}, opts);
    auto [single_theta, single_report] = mtirl::fit_single(mdp, features, demos, opts);
    EXPECT_EQ((joint_theta - single_theta).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FitJoint, PoolingIsOrderInvariantAndMatchesConcat) {
    TabularMdp mdp = oracles::random_mdp(5, 3, 0.9, 211);
    FeatureMap features = oracles::random_features(5, 3, 4, 212);
    mtirl::SoftPolicy pi_a = mtirl::soft_value_iteration(
        mdp, mtirl::reward_from_theta(mdp, features, oracles::random_theta(4, 213, 1.0)),
        1e-12);
    mtirl::SoftPolicy pi_b = mtirl::soft_value_iteration(
        mdp, mtirl::reward_from_theta(mdp, features, oracles::random_theta(4, 214, 1.0)),
        1e-12);
    DemoSet demos_a = mtirl::sample_trajectories(mdp, pi_a.pi, 3, 60, 215, "a");
    DemoSet demos_b = mtirl::sample_trajectories(mdp, pi_b.pi, 7, 60, 216, "b");
    FitOptions opts;
    opts.max_iterations = 50;
    opts.gradient_tolerance = 1e-12;

    auto [ab, report_ab] = mtirl::fit_joint_baseline(mdp, features, {&demos_a, &demos_b}, opts);
    auto [ba, report_ba] = mtirl::fit_joint_baseline(mdp, features, {&demos_b, &demos_a}, opts);
    EXPECT_EQ((ab - ba).cwiseAbs().maxCoeff(), 0.0);

    // Pooling by trajectory count equals fitting the concatenated set.
    DemoSet merged = mtirl::concat(demos_a, demos_b);
    auto [merged_theta, merged_report] = mtirl::fit_single(mdp, features, merged, opts);
    EXPECT_LT((ab - merged_theta).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FitJoint, RejectsEmptySetList) {
    TabularMdp mdp = oracles::random_mdp(4, 2, 0.9, 221);
    FeatureMap features = oracles::random_features(4, 2, 3, 222);
    try {
        mtirl::fit_joint_baseline(mdp, features, {});
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.code(), ValidationError::Code::bad_config);
    }
}

}  // namespace
