#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "mtirl/mdp.hpp"

namespace mtirl {

/// Maximum-causal-entropy policy together with its soft value tables.
/// Invariants (up to the reported fixed-point residual):
///   pi(s, a)   = exp(q_soft(s, a) - v_soft(s)), rows summing to one,
///   v_soft(s)  = log sum_a exp(q_soft(s, a)),
///   q_soft     = R + gamma * T v_soft.
struct SoftPolicy {
    Mat pi;
    Mat q_soft;
    Vec v_soft;
    double residual = 0.0;
    long iterations = 0;
};

namespace detail {

// Row-wise log-sum-exp with max shift; safe for large magnitude values.
inline Vec log_sum_exp_rows(const Mat& q) {
    Vec shift = q.rowwise().maxCoeff();
    return shift.array() +
           (q.colwise() - shift).array().exp().rowwise().sum().log();
}

}  // namespace detail

/// Soft (log-sum-exp) value iteration. Runs the damped-free fixed-point
/// iteration of the soft Bellman operator until the sup-norm change drops
/// below `tol`, optionally warm-started from `v_init`. The returned tables
/// satisfy v = lse(q) and pi = exp(q - v) exactly by construction, and the
/// fixed-point residual of q is at most gamma * residual.
/// Throws ConvergenceError when max_iter is exhausted first.
inline SoftPolicy soft_value_iteration(const TabularMdp& mdp, const Mat& reward,
                                       double tol = 1e-10, long max_iter = 100000,
                                       const Vec* v_init = nullptr) {
    Vec v = v_init ? *v_init : Vec::Zero(mdp.n_states);
    Mat q;
    double delta = std::numeric_limits<double>::infinity();
    long it = 0;
    while (it < max_iter) {
        ++it;
        q = bellman_q(mdp, reward, v);
        Vec v_new = detail::log_sum_exp_rows(q);
        delta = (v_new - v).cwiseAbs().maxCoeff();
        v = std::move(v_new);
        if (delta <= tol) break;
    }
    if (delta > tol) {
        throw ConvergenceError("soft value iteration did not converge", delta, it);
    }
    SoftPolicy out;
    out.pi = (q.colwise() - v).array().exp();
    out.q_soft = std::move(q);
    out.v_soft = std::move(v);
    out.residual = delta;
    out.iterations = it;
    return out;
}

/// Discounted state-action occupancy of a stationary policy:
///   rho(s, a) = pi(a|s) [mu0(s) + gamma sum_{s',a'} rho(s', a') T(s', a', s)],
/// so that sum rho = 1 / (1 - gamma).
struct Occupancy {
    Mat rho;                 // S x A
    double residual = 0.0;   // sup-norm change of the last state-occupancy sweep
    long iterations = 0;

    double total() const { return rho.sum(); }
};

/// Computes the discounted occupancy by fixed-point iteration on the state
/// occupancy d = mu0 + gamma P_pi^T d, optionally warm-started from d_init.
/// Stopping requires both the sup-norm change <= tol and the total-mass
/// deficit |sum d - 1/(1-gamma)| <= 10 tol; the second condition guards the
/// normalization invariant, which a sup-norm test alone does not bound when
/// mass spreads over many states.
inline Occupancy occupancy(const TabularMdp& mdp, const Mat& pi,
                           double tol = 1e-10, long max_iter = 100000,
                           const Vec* d_init = nullptr) {
    const int S = mdp.n_states;
    const int A = mdp.n_actions;
    const double target_mass = 1.0 / (1.0 - mdp.discount);
    Vec d = d_init ? *d_init : Vec::Zero(S);
    double delta = std::numeric_limits<double>::infinity();
    double mass_gap = std::numeric_limits<double>::infinity();
    long it = 0;
    while (it < max_iter) {
        ++it;
        Vec d_new = mdp.initial_dist;
        for (int a = 0; a < A; ++a) {
            d_new.noalias() +=
                mdp.discount * (mdp.transitions[a].transpose() * (pi.col(a).cwiseProduct(d)));
        }
        delta = (d_new - d).cwiseAbs().maxCoeff();
        d = std::move(d_new);
        mass_gap = std::abs(d.sum() - target_mass);
        if (delta <= tol && mass_gap <= 10.0 * tol) break;
    }
    if (delta > tol || mass_gap > 10.0 * tol) {
        throw ConvergenceError("occupancy iteration did not converge",
                               std::max(delta, mass_gap), it);
    }
    Occupancy out;
    out.rho = pi.array().colwise() * d.array();
    out.residual = delta;
    out.iterations = it;
    return out;
}

/// Expected discounted feature counts of the policy inducing `occ`:
///   F = sum_{s,a} rho(s, a) phi(s, a).
inline Vec feature_expectations(const FeatureMap& features, const Occupancy& occ) {
    Mat by_row = occ.rho.transpose();  // column s of an A x S matrix is rho(s, .)
    Eigen::Map<const Vec> flat(by_row.data(), by_row.size());
    return features.table.transpose() * flat;
}

/// Causal log-likelihood of a state-action sequence under policy `pi`:
/// sum_t discount^t log pi(a_t | s_t). The default discount of 1 gives the
/// plain sum; a step with pi = 0 yields -infinity.
inline double trajectory_log_likelihood(const Mat& pi,
                                        const std::vector<std::pair<int, int>>& steps,
                                        double discount = 1.0) {
    double total = 0.0;
    double scale = 1.0;
    for (const auto& [s, a] : steps) {
        double p = pi(s, a);
        if (p <= 0.0) return -std::numeric_limits<double>::infinity();
        total += scale * std::log(p);
        scale *= discount;
    }
    return total;
}

/// Discounted causal entropy of `pi` under its own occupancy:
///   H = sum_{s,a} rho(s, a) (-log pi(a|s)),
/// the occupancy-weighted form of E[-sum_t gamma^t log pi(a_t|s_t)].
/// Terms with zero occupancy contribute zero.
inline double causal_entropy(const Mat& pi, const Occupancy& occ) {
    double h = 0.0;
    for (int s = 0; s < pi.rows(); ++s) {
        for (int a = 0; a < pi.cols(); ++a) {
            double r = occ.rho(s, a);
            if (r > 0.0 && pi(s, a) > 0.0) {
                h -= r * std::log(pi(s, a));
            }
        }
    }
    return h;
}

}  // namespace mtirl
