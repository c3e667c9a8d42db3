#pragma once

// Numerical checks of two facts about weighted Bellman regression:
//  * any strictly positive per-(s, a) weight leaves the minimizer of the
//    population Bellman regression loss unchanged;
//  * with heteroscedastic independent target noise, inverse-variance weights
//    give the minimum-covariance linear unbiased estimator (GLS).
// Always computed in double precision.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/random.hpp"

namespace wimle::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Tabular MDPs
// ---------------------------------------------------------------------------

/// Finite MDP with a fixed stochastic policy. transitions row s * actions + a
/// holds P(. | s, a).
struct TabularMDP {
    int states = 1;
    int actions = 1;
    MatrixXd transitions;  // [states*actions x states]
    MatrixXd rewards;      // [states x actions]
    MatrixXd policy;       // [states x actions]
    double gamma = 0.9;

    int pairs() const { return states * actions; }

    void validate() const
    {
        detail::require(states >= 1 && actions >= 1, "TabularMDP: need at least one state and action");
        detail::require_dims(transitions.rows() == pairs() && transitions.cols() == states &&
                                 rewards.rows() == states && rewards.cols() == actions && policy.rows() == states &&
                                 policy.cols() == actions,
                             "TabularMDP: table shapes");
        detail::require(gamma > 0 && gamma < 1, "TabularMDP: gamma must lie in (0, 1)");
        detail::require(transitions.minCoeff() >= 0 && policy.minCoeff() >= 0, "TabularMDP: negative probability");
        for (int r = 0; r < pairs(); ++r)
            detail::require(std::abs(transitions.row(r).sum() - 1) <= 1e-12, "TabularMDP: P(.|s,a) must sum to 1");
        for (int s = 0; s < states; ++s)
            detail::require(std::abs(policy.row(s).sum() - 1) <= 1e-12, "TabularMDP: pi(.|s) must sum to 1");
    }

    /// State-action transition matrix under the policy: [pairs x pairs].
    MatrixXd pair_transitions() const
    {
        MatrixXd m = MatrixXd::Zero(pairs(), pairs());
        for (int sa = 0; sa < pairs(); ++sa)
            for (int s2 = 0; s2 < states; ++s2)
                for (int a2 = 0; a2 < actions; ++a2)
                    m(sa, s2 * actions + a2) = transitions(sa, s2) * policy(s2, a2);
        return m;
    }
};

inline VectorXd random_simplex(int n, Rng& rng)
{
    std::exponential_distribution<double> e(1.0);
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = e(rng);
    return v / v.sum();
}

inline TabularMDP random_mdp(int states, int actions, double gamma, Rng& rng)
{
    TabularMDP mdp;
    mdp.states = states;
    mdp.actions = actions;
    mdp.gamma = gamma;
    mdp.transitions.resize(states * actions, states);
    for (int r = 0; r < states * actions; ++r) mdp.transitions.row(r) = random_simplex(states, rng).transpose();
    mdp.policy.resize(states, actions);
    for (int s = 0; s < states; ++s) mdp.policy.row(s) = random_simplex(actions, rng).transpose();
    std::uniform_real_distribution<double> u(-1, 1);
    mdp.rewards.resize(states, actions);
    for (int i = 0; i < mdp.rewards.size(); ++i) mdp.rewards.data()[i] = u(rng);
    return mdp;
}

/// Q^pi by a direct linear solve of (I - gamma P_pi) Q = r.
inline MatrixXd evaluate_policy_directly(const TabularMDP& mdp)
{
    mdp.validate();
    const int n = mdp.pairs();
    const MatrixXd lhs = MatrixXd::Identity(n, n) - mdp.gamma * mdp.pair_transitions();
    VectorXd r(n);
    for (int s = 0; s < mdp.states; ++s)
        for (int a = 0; a < mdp.actions; ++a) r(s * mdp.actions + a) = mdp.rewards(s, a);
    const VectorXd q = lhs.partialPivLu().solve(r);
    MatrixXd out(mdp.states, mdp.actions);
    for (int s = 0; s < mdp.states; ++s)
        for (int a = 0; a < mdp.actions; ++a) out(s, a) = q(s * mdp.actions + a);
    return out;
}

struct FixedPointOptions {
    double tolerance = 1e-13;
    int max_iterations = 200000;
};

/// Fixed point of weighted Bellman regression: repeatedly minimizes
///   sum_{s,a,s'} d(s,a) w(s,a) P(s'|s,a) (r(s,a) + gamma V(s') - Q(s,a))^2
/// over one-hot (s, a) features by weighted least squares, with V taken from
/// the previous iterate under the policy. `weights` and the optional
/// state-action distribution are [states x actions]; d defaults to uniform.
inline MatrixXd bellman_fixed_point(const TabularMDP& mdp, const MatrixXd& weights,
                                    const MatrixXd* distribution = nullptr, FixedPointOptions opt = {})
{
    mdp.validate();
    const int ns = mdp.states, na = mdp.actions, np = mdp.pairs();
    detail::require_dims(weights.rows() == ns && weights.cols() == na, "bellman_fixed_point: weight table shape");
    MatrixXd d = distribution ? *distribution : MatrixXd::Constant(ns, na, 1.0 / np);
    detail::require_dims(d.rows() == ns && d.cols() == na, "bellman_fixed_point: distribution shape");
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) {
            detail::require(d(s, a) > 0, "bellman_fixed_point: distribution must cover every (s, a)");
            if (!(weights(s, a) > 0))
                throw ContractError("bellman_fixed_point: non-positive weight on the state-action support");
        }

    // One regression row per (s, a, s') outcome.
    const int rows = np * ns;
    MatrixXd phi = MatrixXd::Zero(rows, np);
    VectorXd omega(rows);
    for (int sa = 0; sa < np; ++sa)
        for (int s2 = 0; s2 < ns; ++s2) {
            const int row = sa * ns + s2;
            phi(row, sa) = 1;
            omega(row) = d(sa / na, sa % na) * weights(sa / na, sa % na) * mdp.transitions(sa, s2);
        }
    const MatrixXd normal = phi.transpose() * omega.asDiagonal() * phi;
    const auto solver = normal.ldlt();
    detail::require(solver.info() == Eigen::Success, "bellman_fixed_point: singular normal matrix");

    VectorXd q = VectorXd::Zero(np);
    VectorXd y(rows);
    for (int it = 0; it < opt.max_iterations; ++it) {
        VectorXd v(ns);
        for (int s = 0; s < ns; ++s) {
            v(s) = 0;
            for (int a = 0; a < na; ++a) v(s) += mdp.policy(s, a) * q(s * na + a);
        }
        for (int sa = 0; sa < np; ++sa)
            for (int s2 = 0; s2 < ns; ++s2) y(sa * ns + s2) = mdp.rewards(sa / na, sa % na) + mdp.gamma * v(s2);
        const VectorXd next = solver.solve(phi.transpose() * omega.asDiagonal() * y);
        const double delta = (next - q).cwiseAbs().maxCoeff();
        q = next;
        if (delta < opt.tolerance) break;
    }
    MatrixXd out(ns, na);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) out(s, a) = q(s * na + a);
    return out;
}

// ---------------------------------------------------------------------------
// Weighted least squares with diagonal noise
// ---------------------------------------------------------------------------

/// y = design * theta_star + eps, eps_i ~ N(0, noise_var_i) independent.
struct LinearRegressionInstance {
    MatrixXd design;
    VectorXd theta_star;
    VectorXd noise_var;

    void validate() const
    {
        detail::require_dims(design.cols() == theta_star.size() && design.rows() == noise_var.size(),
                             "LinearRegressionInstance: shapes");
        detail::require(noise_var.minCoeff() > 0, "LinearRegressionInstance: noise variances must be positive");
    }
};

struct WlsResult {
    MatrixXd estimator;   // A = (Phi^T W Phi)^-1 Phi^T W, so theta_hat = A y
    MatrixXd covariance;  // A Sigma A^T
    VectorXd theta_hat;
};

inline WlsResult wls_estimator(const LinearRegressionInstance& inst, const VectorXd& weights,
                               const VectorXd* observations = nullptr)
{
    inst.validate();
    detail::require_dims(weights.size() == inst.design.rows(), "wls_estimator: one weight per observation");
    detail::require(weights.minCoeff() > 0, "wls_estimator: weights must be positive");
    const MatrixXd wphi = weights.asDiagonal() * inst.design;
    const MatrixXd normal = inst.design.transpose() * wphi;
    Eigen::FullPivLU<MatrixXd> lu(normal);
    if (lu.rank() < normal.rows()) throw ContractError("wls_estimator: singular normal matrix");

    WlsResult r;
    r.estimator = lu.solve(wphi.transpose());
    r.covariance = r.estimator * inst.noise_var.asDiagonal() * r.estimator.transpose();
    r.covariance = 0.5 * (r.covariance + r.covariance.transpose()).eval();
    const VectorXd y = observations ? *observations : VectorXd(inst.design * inst.theta_star);
    r.theta_hat = r.estimator * y;
    return r;
}

/// Inverse-variance weights.
inline VectorXd gls_weights(const LinearRegressionInstance& inst) { return inst.noise_var.cwiseInverse(); }

struct DominanceReport {
    MatrixXd gap;  // Cov(challenger) - Cov(GLS)
    double min_eigenvalue = 0;
    double max_abs_gap = 0;
    bool psd = false;
};

inline constexpr double kPsdTolerance = -1e-10;

inline DominanceReport verify_gls_dominance(const LinearRegressionInstance& inst, const VectorXd& challenger)
{
    const auto ch = wls_estimator(inst, challenger);
    const auto gls = wls_estimator(inst, gls_weights(inst));
    DominanceReport rep;
    rep.gap = ch.covariance - gls.covariance;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(rep.gap, Eigen::EigenvaluesOnly);
    rep.min_eigenvalue = eig.eigenvalues().minCoeff();
    rep.max_abs_gap = rep.gap.cwiseAbs().maxCoeff();
    rep.psd = rep.min_eigenvalue >= kPsdTolerance;
    return rep;
}

/// Empirical covariance of theta_hat over `draws` noise realizations.
inline MatrixXd monte_carlo_covariance(const LinearRegressionInstance& inst, const VectorXd& weights, int draws,
                                       Rng& rng)
{
    detail::require(draws >= 1000, "monte_carlo_covariance: need at least 1000 draws");
    const auto w = wls_estimator(inst, weights);
    const VectorXd mean_y = inst.design * inst.theta_star;
    const VectorXd sd = inst.noise_var.cwiseSqrt();
    std::normal_distribution<double> n(0, 1);
    const Eigen::Index d = inst.theta_star.size();
    VectorXd sum = VectorXd::Zero(d);
    MatrixXd sum_sq = MatrixXd::Zero(d, d);
    VectorXd y(mean_y.size());
    for (int k = 0; k < draws; ++k) {
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = mean_y(i) + sd(i) * n(rng);
        const VectorXd th = w.estimator * y;
        sum += th;
        sum_sq.noalias() += th * th.transpose();
    }
    const VectorXd mean = sum / draws;
    return (sum_sq - static_cast<double>(draws) * mean * mean.transpose()) / (draws - 1);
}

/// Random well-conditioned instance with m observations and d parameters.
inline LinearRegressionInstance random_instance(int m, int d, Rng& rng)
{
    detail::require(m >= d && d >= 1, "random_instance: need m >= d >= 1");
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> logv(std::log(0.05), std::log(20.0));
    LinearRegressionInstance inst;
    while (true) {
        inst.design.resize(m, d);
        for (Eigen::Index i = 0; i < inst.design.size(); ++i) inst.design.data()[i] = n(rng);
        Eigen::JacobiSVD<MatrixXd> svd(inst.design);
        const auto sv = svd.singularValues();
        if (sv(sv.size() - 1) > 0.05 * sv(0)) break;
    }
    inst.theta_star.resize(d);
    for (int i = 0; i < d; ++i) inst.theta_star(i) = n(rng);
    inst.noise_var.resize(m);
    for (int i = 0; i < m; ++i) inst.noise_var(i) = std::exp(logv(rng));
    return inst;
}

// ---------------------------------------------------------------------------
// Batch verification (used by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

struct FixedPointCheck {
    int instances = 0;
    int failures = 0;
    double worst_weighted_vs_unweighted = 0;
    double worst_vs_direct = 0;
};

inline FixedPointCheck check_fixed_point_invariance(int instances, std::uint64_t seed, double tolerance = 1e-8)
{
    Rng rng = SeedSequence(seed).stream("theory.mdp");
    std::uniform_int_distribution<int> ns(1, 8), na(1, 4);
    std::uniform_real_distribution<double> g(0.5, 0.95), lw(std::log(0.01), std::log(100.0));
    FixedPointCheck c;
    for (int i = 0; i < instances; ++i) {
        const auto mdp = random_mdp(ns(rng), na(rng), g(rng), rng);
        MatrixXd w(mdp.states, mdp.actions);
        for (int k = 0; k < w.size(); ++k) w.data()[k] = std::exp(lw(rng));
        const MatrixXd q_w = bellman_fixed_point(mdp, w);
        const MatrixXd q_1 = bellman_fixed_point(mdp, MatrixXd::Ones(mdp.states, mdp.actions));
        const MatrixXd q_d = evaluate_policy_directly(mdp);
        const double a = (q_w - q_1).cwiseAbs().maxCoeff();
        const double b = std::max((q_w - q_d).cwiseAbs().maxCoeff(), (q_1 - q_d).cwiseAbs().maxCoeff());
        c.worst_weighted_vs_unweighted = std::max(c.worst_weighted_vs_unweighted, a);
        c.worst_vs_direct = std::max(c.worst_vs_direct, b);
        if (a >= tolerance || b >= tolerance) ++c.failures;
        ++c.instances;
    }
    return c;
}

struct DominanceCheck {
    int instances = 0;
    int failures = 0;
    double worst_min_eigenvalue = 0;
};

inline DominanceCheck check_gls_dominance(int instances, std::uint64_t seed)
{
    Rng rng = SeedSequence(seed).stream("theory.gls");
    std::uniform_int_distribution<int> dd(1, 5);
    std::uniform_real_distribution<double> lw(std::log(0.01), std::log(100.0));
    DominanceCheck c;
    c.worst_min_eigenvalue = std::numeric_limits<double>::infinity();
    for (int i = 0; i < instances; ++i) {
        const int d = dd(rng);
        std::uniform_int_distribution<int> mm(d + 1, 20);
        const auto inst = random_instance(mm(rng), d, rng);
        VectorXd w(inst.design.rows());
        for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = std::exp(lw(rng));
        const auto rep = verify_gls_dominance(inst, w);
        c.worst_min_eigenvalue = std::min(c.worst_min_eigenvalue, rep.min_eigenvalue);
        if (!rep.psd) ++c.failures;
        ++c.instances;
    }
    return c;
}

}  // namespace wimle::theory
