#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtirl/errors.hpp"

namespace mtirl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Finite MDP with dense tabular dynamics.
///
/// Transitions are stored per action: transitions[a] is an S x S matrix whose
/// row s is the distribution over successor states of taking a in s. Rewards,
/// when present, are stored as an S x A table indexed by (state, action).
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<Mat> transitions;  // n_actions matrices, each S x S row-stochastic
    double discount = 0.0;         // in [0, 1); 1 is rejected at validation
    Vec initial_dist;              // length S, sums to 1
    std::optional<Mat> reward;     // S x A ground-truth reward, if known
};

/// Feature map phi(s, a) in R^k, stored row-major over state-action pairs:
/// row s * n_actions + a of `table` is phi(s, a).
struct FeatureMap {
    int k = 0;
    Mat table;  // (S * A) x k

    Eigen::Block<const Mat, 1, Eigen::Dynamic> row(int s, int a, int n_actions) const {
        return table.block<1, Eigen::Dynamic>(s * n_actions + a, 0, 1, table.cols());
    }
};

namespace detail {

inline bool row_is_distribution(const Eigen::RowVectorXd& row, double tol) {
    if (!row.allFinite()) return false;
    if ((row.array() < -tol).any()) return false;
    return std::abs(row.sum() - 1.0) <= tol;
}

}  // namespace detail

/// Structural validation: shapes consistent, every transition row and the
/// initial distribution stochastic within 1e-9, discount strictly inside
/// [0, 1), all entries finite. Throws ValidationError with a distinguishing
/// code; passing validation is a precondition of every planner below.
inline void validate(const TabularMdp& mdp) {
    const int S = mdp.n_states;
    const int A = mdp.n_actions;
    if (S <= 0 || A <= 0) {
        throw ValidationError(ValidationError::Code::shape_mismatch,
                              "MDP needs at least one state and one action");
    }
    if (static_cast<int>(mdp.transitions.size()) != A) {
        throw ValidationError(ValidationError::Code::shape_mismatch,
                              "expected one transition matrix per action");
    }
    constexpr double kTol = 1e-9;
    for (int a = 0; a < A; ++a) {
        const Mat& T = mdp.transitions[a];
        if (T.rows() != S || T.cols() != S) {
            throw ValidationError(ValidationError::Code::shape_mismatch,
                                  "transition matrix for action " + std::to_string(a) +
                                      " is not S x S");
        }
        for (int s = 0; s < S; ++s) {
            if (!detail::row_is_distribution(T.row(s), kTol)) {
                throw ValidationError(
                    ValidationError::Code::non_stochastic_transition,
                    "transition row not a distribution at state " + std::to_string(s) +
                        ", action " + std::to_string(a));
            }
        }
    }
    if (mdp.initial_dist.size() != S ||
        !detail::row_is_distribution(mdp.initial_dist.transpose(), kTol)) {
        throw ValidationError(ValidationError::Code::non_stochastic_initial_dist,
                              "initial state distribution is not a distribution over S");
    }
    if (!(mdp.discount >= 0.0) || !(mdp.discount < 1.0)) {
        throw ValidationError(ValidationError::Code::discount_out_of_range,
                              "discount must lie in [0, 1); undiscounted MDPs are not supported");
    }
    if (mdp.reward) {
        if (mdp.reward->rows() != S || mdp.reward->cols() != A) {
            throw ValidationError(ValidationError::Code::shape_mismatch,
                                  "reward table is not S x A");
        }
        if (!mdp.reward->allFinite()) {
            throw ValidationError(ValidationError::Code::non_finite_entry,
                                  "reward table contains non-finite entries");
        }
    }
}

/// Validates that a feature map is compatible with the MDP.
inline void validate_features(const TabularMdp& mdp, const FeatureMap& features) {
    if (features.k <= 0 || features.table.cols() != features.k ||
        features.table.rows() != static_cast<long>(mdp.n_states) * mdp.n_actions) {
        throw ValidationError(ValidationError::Code::shape_mismatch,
                              "feature table must be (S*A) x k with k >= 1");
    }
    if (!features.table.allFinite()) {
        throw ValidationError(ValidationError::Code::non_finite_entry,
                              "feature table contains non-finite entries");
    }
}

/// One application of the action-value backup: Q(s,a) = R(s,a) + gamma * E_T[V].
inline Mat bellman_q(const TabularMdp& mdp, const Mat& reward, const Vec& v) {
    Mat q(mdp.n_states, mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a) {
        q.col(a) = reward.col(a) + mdp.discount * (mdp.transitions[a] * v);
    }
    return q;
}

struct ViResult {
    Vec v;            // optimal state values
    Mat q;            // optimal action values, q = R + gamma T v exactly
    double residual;  // sup-norm Bellman residual at the returned tables
    long iterations;
};

/// Hard value iteration to sup-norm tolerance. Throws ConvergenceError with
/// the final residual when max_iter is exhausted before the tolerance holds.
inline ViResult value_iteration(const TabularMdp& mdp, const Mat& reward,
                                double tol = 1e-10, long max_iter = 100000) {
    const int S = mdp.n_states;
    Vec v = Vec::Zero(S);
    double delta = std::numeric_limits<double>::infinity();
    long it = 0;
    while (it < max_iter) {
        ++it;
        Mat q = bellman_q(mdp, reward, v);
        Vec v_new = q.rowwise().maxCoeff();
        delta = (v_new - v).cwiseAbs().maxCoeff();
        v = std::move(v_new);
        if (delta <= tol) break;
    }
    if (delta > tol) {
        throw ConvergenceError("value iteration did not converge", delta, it);
    }
    // Recompute q from the final v so that q = R + gamma T v holds exactly;
    // the residual of the pair is then at most gamma * delta <= tol.
    Mat q = bellman_q(mdp, reward, v);
    double residual = (q.rowwise().maxCoeff() - v).cwiseAbs().maxCoeff();
    return ViResult{std::move(v), std::move(q), residual, it};
}

/// Deterministic greedy policy from an action-value table. Ties break toward
/// the lowest action index, making the result reproducible across platforms.
inline std::vector<int> greedy_policy(const Mat& q) {
    std::vector<int> policy(q.rows());
    for (int s = 0; s < q.rows(); ++s) {
        int best = 0;
        for (int a = 1; a < q.cols(); ++a) {
            if (q(s, a) > q(s, best)) best = a;
        }
        policy[s] = best;
    }
    return policy;
}

/// Expands a deterministic policy into a row-stochastic S x A matrix.
inline Mat policy_matrix(int n_states, int n_actions, const std::vector<int>& policy) {
    Mat pi = Mat::Zero(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) pi(s, policy[s]) = 1.0;
    return pi;
}

/// Exact policy evaluation by a direct linear solve of
/// (I - gamma P_pi) v = r_pi. The solve is checked: if the back-substituted
/// residual exceeds 1e-9 the system is reported rather than regularized.
inline Vec policy_state_values(const TabularMdp& mdp, const Mat& reward, const Mat& pi) {
    const int S = mdp.n_states;
    Mat p_pi = Mat::Zero(S, S);
    for (int a = 0; a < mdp.n_actions; ++a) {
        p_pi.noalias() += pi.col(a).asDiagonal() * mdp.transitions[a];
    }
    Vec r_pi = (pi.array() * reward.array()).rowwise().sum();
    Mat system = Mat::Identity(S, S) - mdp.discount * p_pi;
    Eigen::PartialPivLU<Mat> lu(system);
    Vec v = lu.solve(r_pi);
    double residual = (system * v - r_pi).cwiseAbs().maxCoeff();
    if (!v.allFinite() || residual > 1e-9) {
        throw ConvergenceError("policy evaluation solve failed", residual, 1);
    }
    return v;
}

/// Expected discounted return of a (row-stochastic) policy from the initial
/// state distribution.
inline double policy_value(const TabularMdp& mdp, const Mat& reward, const Mat& pi) {
    return mdp.initial_dist.dot(policy_state_values(mdp, reward, pi));
}

/// Convenience overload for deterministic policies.
inline double policy_value(const TabularMdp& mdp, const Mat& reward,
                           const std::vector<int>& policy) {
    return policy_value(mdp, reward, policy_matrix(mdp.n_states, mdp.n_actions, policy));
}

}  // namespace mtirl
