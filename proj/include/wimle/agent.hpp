#pragma once

// Soft actor-critic with twin quantile critics. The critic's quantile-Huber
// loss is multiplied per transition by the transition's confidence weight.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/numkit.hpp"
#include "wimle/random.hpp"
#include "wimle/transition.hpp"

namespace wimle::agent {

struct AgentConfig {
    int state_dim = 1;
    int action_dim = 1;
    Vector action_low = Vector::Constant(1, -1);
    Vector action_high = Vector::Constant(1, 1);
    int hidden = 256;
    int depth = 2;
    int quantiles = 100;
    Real actor_lr = Real(3e-4);
    Real critic_lr = Real(3e-4);
    Real alpha_lr = Real(3e-4);
    Real gamma = Real(0.99);
    Real polyak = Real(0.005);
    Real kappa = 1;
    Real initial_alpha = 1;
    /// Also weight the actor objective by the transition weights (ablation).
    bool weight_actor = false;
};

inline constexpr Real kLogStdMin = -20;
inline constexpr Real kLogStdMax = 2;

namespace detail {
inline Real softplus(Real x) { return x > 20 ? x : std::log1p(std::exp(x)); }

/// log(1 - tanh(u)^2), stable for large |u|.
inline Real log_one_minus_tanh2(Real u)
{
    return 2 * (std::numbers::ln2_v<Real> - u - softplus(-2 * u));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Everything a reparameterized policy sample needs for its backward pass.
struct PolicySample {
    Matrix actions;
    Vector log_prob;
    Matrix mean;
    Matrix log_std;
    Matrix clamp_mask;  // 1 where log_std was not clamped
    Matrix noise;
    Matrix squashed;    // tanh(u)
    Tape tape;
};

/// Tanh-squashed diagonal Gaussian policy s -> (mean, log_std).
class GaussianPolicy {
public:
    GaussianPolicy() = default;
    GaussianPolicy(const AgentConfig& cfg, Rng& init_rng, InitOptions init = {})
        : low_(cfg.action_low), high_(cfg.action_high)
    {
        wimle::detail::require_dims(low_.size() == cfg.action_dim && high_.size() == cfg.action_dim,
                                    "GaussianPolicy: action bounds dimension");
        wimle::detail::require((high_ - low_).minCoeff() > 0, "GaussianPolicy: need low < high");
        Architecture arch;
        arch.kind = Architecture::Kind::mlp;
        arch.input = cfg.state_dim;
        arch.width = cfg.hidden;
        arch.depth = cfg.depth;
        arch.heads = {cfg.action_dim, cfg.action_dim};
        arch.head_names = {"mean", "log_std"};
        net_ = Network(arch, init_rng, init);
    }

    Network& net() noexcept { return net_; }
    const Network& net() const noexcept { return net_; }
    int action_dim() const { return static_cast<int>(low_.size()); }
    const Vector& low() const noexcept { return low_; }
    const Vector& high() const noexcept { return high_; }

    Matrix draw_noise(Index rows, Rng& rng) const
    {
        std::normal_distribution<Real> n(0, 1);
        Matrix e(rows, action_dim());
        for (Index i = 0; i < e.size(); ++i) e.data()[i] = n(rng);
        return e;
    }

    /// Reparameterized sample a = squash(mean + std * noise) with its log-density.
    PolicySample sample(const Matrix& S, const Matrix& noise, bool record = false) const
    {
        const Index ad = action_dim();
        wimle::detail::require_dims(noise.rows() == S.rows() && noise.cols() == ad, "GaussianPolicy: noise shape");
        PolicySample ps;
        const Matrix out = net_.forward(S, record ? &ps.tape : nullptr);
        ps.mean = out.leftCols(ad);
        const Matrix raw = out.rightCols(ad);
        ps.log_std = raw.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
        ps.clamp_mask = ((raw.array() >= kLogStdMin) && (raw.array() <= kLogStdMax)).cast<Real>().matrix();
        ps.noise = noise;
        ps.actions.resize(S.rows(), ad);
        ps.squashed.resize(S.rows(), ad);
        ps.log_prob = Vector::Zero(S.rows());
        const Vector half = (high_ - low_) / 2;
        const Vector centre = (high_ + low_) / 2;
        const Real log_norm = Real(0.5) * std::log(2 * std::numbers::pi_v<Real>);
        for (Index i = 0; i < S.rows(); ++i) {
            for (Index d = 0; d < ad; ++d) {
                const Real u = ps.mean(i, d) + std::exp(ps.log_std(i, d)) * noise(i, d);
                const Real t = std::tanh(u);
                ps.squashed(i, d) = t;
                ps.actions(i, d) = centre(d) + half(d) * t;
                ps.log_prob(i) += -Real(0.5) * noise(i, d) * noise(i, d) - ps.log_std(i, d) - log_norm -
                                  detail::log_one_minus_tanh2(u) - std::log(half(d));
            }
        }
        return ps;
    }

    Matrix deterministic(const Matrix& S) const
    {
        const Matrix mean = net_.forward(S).leftCols(action_dim());
        Matrix a(S.rows(), action_dim());
        for (Index i = 0; i < a.rows(); ++i)
            for (Index d = 0; d < a.cols(); ++d)
                a(i, d) = (high_(d) + low_(d)) / 2 + (high_(d) - low_(d)) / 2 * std::tanh(mean(i, d));
        return a;
    }

    Matrix act(const Matrix& S, bool deterministic_mode, Rng& rng) const
    {
        if (deterministic_mode) return deterministic(S);
        return sample(S, draw_noise(S.rows(), rng)).actions;
    }

private:
    Network net_;
    Vector low_;
    Vector high_;
};

inline Vector select_action(const GaussianPolicy& policy, const Vector& s, bool deterministic, Rng& rng)
{
    wimle::detail::require(s.allFinite(), "select_action: state must be finite");
    return policy.act(s.transpose(), deterministic, rng).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Critics and temperature
// ---------------------------------------------------------------------------

/// Midpoint quantile fractions (2i - 1) / (2N), i = 1..N.
inline Vector quantile_midpoints(int n)
{
    Vector t(n);
    for (int i = 0; i < n; ++i) t(i) = static_cast<Real>(2 * i + 1) / static_cast<Real>(2 * n);
    return t;
}

/// Twin quantile critics (s, a) -> N quantiles, with Polyak-tracked targets.
class QuantileCritic {
public:
    QuantileCritic() = default;
    QuantileCritic(const AgentConfig& cfg, Rng& init_rng, InitOptions init = {})
        : taus_(quantile_midpoints(cfg.quantiles)), polyak_(cfg.polyak)
    {
        wimle::detail::require(cfg.quantiles >= 1, "QuantileCritic: need at least one quantile");
        Architecture arch;
        arch.kind = Architecture::Kind::mlp;
        arch.input = cfg.state_dim + cfg.action_dim;
        arch.width = cfg.hidden;
        arch.depth = cfg.depth;
        arch.heads = {cfg.quantiles};
        arch.head_names = {"quantiles"};
        for (int k = 0; k < 2; ++k) {
            online_[k] = Network(arch, init_rng, init);
            target_[k] = online_[k];
            optim_[k] = AdamState(online_[k].parameters(), AdamConfig{cfg.critic_lr});
        }
    }

    Network& online(int k) { return online_[k]; }
    const Network& online(int k) const { return online_[k]; }
    Network& target(int k) { return target_[k]; }
    const Network& target(int k) const { return target_[k]; }
    AdamState& optimizer(int k) { return optim_[k]; }
    const Vector& taus() const noexcept { return taus_; }
    int quantiles() const { return static_cast<int>(taus_.size()); }
    Real polyak() const noexcept { return polyak_; }

private:
    Network online_[2];
    Network target_[2];
    AdamState optim_[2];
    Vector taus_;
    Real polyak_ = Real(0.005);
};

struct Temperature {
    Real log_alpha = 0;
    Real target_entropy = -1;
    AdamState optim;

    Temperature() = default;
    Temperature(Real initial_alpha, Real target, Real lr) : log_alpha(std::log(initial_alpha)), target_entropy(target)
    {
        ParameterSet p;
        p.add("log_alpha", Matrix::Constant(1, 1, log_alpha));
        optim = AdamState(p, AdamConfig{lr});
    }

    Real alpha() const { return std::exp(log_alpha); }
};

inline Matrix join_columns(const Matrix& a, const Matrix& b)
{
    Matrix x(a.rows(), a.cols() + b.cols());
    x.leftCols(a.cols()) = a;
    x.rightCols(b.cols()) = b;
    return x;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Quantile-Huber loss per row: sum over predicted quantiles j of the mean over
/// target samples k of |tau_j - 1{u < 0}| * Huber_kappa(u) / kappa, u = target_k - pred_j.
/// `grad` (optional) receives d(row loss)/d(pred).
inline Vector quantile_huber_loss(const Matrix& pred, const Matrix& target, const Vector& taus, Real kappa,
                                  Matrix* grad = nullptr)
{
    wimle::detail::require_dims(pred.rows() == target.rows() && pred.cols() == taus.size(),
                                "quantile_huber_loss: shape mismatch");
    wimle::detail::require(kappa > 0, "quantile_huber_loss: kappa must be positive");
    const Index n = pred.rows();
    const Index nq = pred.cols();
    const Index nt = target.cols();
    Vector loss = Vector::Zero(n);
    if (grad) grad->setZero(n, nq);
    const Real scale = 1 / (kappa * static_cast<Real>(nt));
    for (Index i = 0; i < n; ++i) {
        Real li = 0;
        for (Index j = 0; j < nq; ++j) {
            const Real th = pred(i, j);
            const Real tau = taus(j);
            Real gj = 0;
            for (Index k = 0; k < nt; ++k) {
                const Real u = target(i, k) - th;
                const Real au = std::abs(u);
                const Real w = u < 0 ? 1 - tau : tau;
                if (au <= kappa) {
                    li += w * Real(0.5) * u * u;
                    gj -= w * u;
                } else {
                    li += w * kappa * (au - Real(0.5) * kappa);
                    gj -= w * kappa * (u < 0 ? Real(-1) : Real(1));
                }
            }
            if (grad) (*grad)(i, j) = gj * scale;
        }
        loss(i) = li * scale;
    }
    return loss;
}

/// Distributional TD targets r + gamma (1 - done)(min_k Qbar_k(s', a') - alpha log pi(a'|s')),
/// with a' drawn from the policy using `next_noise`.
inline Matrix critic_targets(const QuantileCritic& critic, const buffers::Batch& b, const GaussianPolicy& policy,
                             Real alpha, Real gamma, const Matrix& next_noise)
{
    const auto next = policy.sample(b.next_states, next_noise);
    const Matrix x = join_columns(b.next_states, next.actions);
    const Matrix t = critic.target(0).forward(x).cwiseMin(critic.target(1).forward(x));
    Matrix y(t.rows(), t.cols());
    for (Index i = 0; i < t.rows(); ++i) {
        const Real boot = gamma * (1 - b.done(i));
        y.row(i) = (b.rewards(i) + boot * (t.row(i).array() - alpha * next.log_prob(i))).matrix();
    }
    return y;
}

struct CriticLoss {
    Real loss = 0;
    Gradients grads[2];
};

/// Weighted critic loss: mean over the batch of w_i times the summed
/// quantile-Huber losses of both critics against shared targets.
inline CriticLoss weighted_critic_loss(const QuantileCritic& critic, const buffers::Batch& b, const Matrix& targets,
                                       Real kappa)
{
    for (Index i = 0; i < b.size(); ++i)
        if (!(b.weights(i) > 0 && b.weights(i) <= 1))
            throw ContractError("weighted_critic_loss: transition weight outside (0, 1]");
    const Matrix x = join_columns(b.states, b.actions);
    const Real inv_n = 1 / static_cast<Real>(b.size());
    CriticLoss out;
    for (int k = 0; k < 2; ++k) {
        Tape tape;
        const Matrix q = critic.online(k).forward(x, &tape);
        Matrix g;
        const Vector per = quantile_huber_loss(q, targets, critic.taus(), kappa, &g);
        for (Index i = 0; i < b.size(); ++i) {
            out.loss += b.weights(i) * per(i) * inv_n;
            g.row(i) *= b.weights(i) * inv_n;
        }
        out.grads[k] = critic.online(k).zero_gradients();
        critic.online(k).backward(tape, g, out.grads[k]);
    }
    return out;
}

struct ActorLoss {
    Real loss = 0;
    Real mean_log_prob = 0;
    Gradients grads;
};

/// Actor objective mean_i c_i (alpha log pi(a_i|s_i) - min_k mean_j Q_k(s_i, a_i)_j) for
/// reparameterized a_i = squash(mean + std * noise_i); c_i = 1 unless `weights` is given.
inline ActorLoss actor_loss(const GaussianPolicy& policy, const QuantileCritic& critic, Real alpha, const Matrix& S,
                            const Matrix& noise, const Vector* weights = nullptr)
{
    const Index n = S.rows();
    const Index ad = policy.action_dim();
    const Index sd = S.cols();
    auto ps = policy.sample(S, noise, true);
    const Matrix x = join_columns(S, ps.actions);

    Tape tapes[2];
    Vector qmean[2];
    for (int k = 0; k < 2; ++k) qmean[k] = critic.online(k).forward(x, &tapes[k]).rowwise().mean();

    const Real inv_n = 1 / static_cast<Real>(n);
    ActorLoss out;
    Matrix dq_dx[2];
    for (int k = 0; k < 2; ++k) {
        Matrix g = Matrix::Zero(n, critic.quantiles());
        for (Index i = 0; i < n; ++i) {
            const bool chosen = (k == 0) ? qmean[0](i) <= qmean[1](i) : qmean[1](i) < qmean[0](i);
            if (chosen) g.row(i).setConstant(1 / static_cast<Real>(critic.quantiles()));
        }
        Gradients scratch = critic.online(k).zero_gradients();
        dq_dx[k] = critic.online(k).backward(tapes[k], g, scratch);
    }

    Matrix g_out(n, 2 * ad);
    const Vector half = (policy.high() - policy.low()) / 2;
    for (Index i = 0; i < n; ++i) {
        const Real c = weights ? (*weights)(i) : Real(1);
        const Real q = std::min(qmean[0](i), qmean[1](i));
        out.loss += c * (alpha * ps.log_prob(i) - q) * inv_n;
        out.mean_log_prob += ps.log_prob(i) * inv_n;
        for (Index d = 0; d < ad; ++d) {
            const Real t = ps.squashed(i, d);
            const Real dq_da = dq_dx[0](i, sd + d) + dq_dx[1](i, sd + d);
            // d/du of [alpha * log pi - Q] through a = centre + half * tanh(u).
            const Real du = c * inv_n * (-dq_da * half(d) * (1 - t * t) + alpha * 2 * t);
            const Real sd_ = std::exp(ps.log_std(i, d));
            g_out(i, d) = du;
            g_out(i, ad + d) = (du * sd_ * ps.noise(i, d) - c * inv_n * alpha) * ps.clamp_mask(i, d);
        }
    }
    out.grads = policy.net().zero_gradients();
    policy.net().backward(ps.tape, g_out, out.grads);
    return out;
}

/// d/d(log alpha) of -log_alpha * mean(log pi + target_entropy); zero when the
/// policy entropy equals the target.
inline Real temperature_gradient(Real mean_log_prob, Real target_entropy)
{
    return -(mean_log_prob + target_entropy);
}

/// target <- (1 - tau) target + tau online, for both critics.
inline void polyak_update(QuantileCritic& critic, Real tau)
{
    wimle::detail::require(tau > 0 && tau <= 1, "polyak_update: tau must lie in (0, 1]");
    for (int k = 0; k < 2; ++k) {
        auto& tp = critic.target(k).parameters();
        const auto& op = critic.online(k).parameters();
        for (std::size_t i = 0; i < tp.size(); ++i) {
            auto t = tp.value(i);
            t = (1 - tau) * t + tau * op[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

struct UpdateStats {
    Real critic_loss = 0;
    Real actor_loss = 0;
    Real alpha = 0;
    Real entropy = 0;
};

class SacAgent {
public:
    SacAgent() = default;
    SacAgent(const AgentConfig& cfg, std::uint64_t seed) : cfg_(cfg)
    {
        SeedSequence seq(seed);
        Rng actor_rng = seq.stream("init.actor");
        Rng critic_rng = seq.stream("init.critic");
        policy_ = GaussianPolicy(cfg, actor_rng);
        critic_ = QuantileCritic(cfg, critic_rng);
        actor_optim_ = AdamState(policy_.net().parameters(), AdamConfig{cfg.actor_lr});
        temperature_ = Temperature(cfg.initial_alpha, -static_cast<Real>(cfg.action_dim), cfg.alpha_lr);
    }

    const AgentConfig& config() const noexcept { return cfg_; }
    GaussianPolicy& policy() noexcept { return policy_; }
    const GaussianPolicy& policy() const noexcept { return policy_; }
    QuantileCritic& critic() noexcept { return critic_; }
    const QuantileCritic& critic() const noexcept { return critic_; }
    Temperature& temperature() noexcept { return temperature_; }
    const Temperature& temperature() const noexcept { return temperature_; }

    Real critic_update(const buffers::Batch& b, Rng& rng)
    {
        const Matrix next_noise = policy_.draw_noise(b.size(), rng);
        const Matrix y = critic_targets(critic_, b, policy_, temperature_.alpha(), cfg_.gamma, next_noise);
        auto cl = weighted_critic_loss(critic_, b, y, cfg_.kappa);
        if (!std::isfinite(cl.loss)) throw NumericError("critic update: non-finite loss");
        for (int k = 0; k < 2; ++k) adam_step(critic_.online(k).parameters(), cl.grads[k], critic_.optimizer(k));
        return cl.loss;
    }

    UpdateStats actor_and_temperature_update(const buffers::Batch& b, Rng& rng)
    {
        const Matrix noise = policy_.draw_noise(b.size(), rng);
        const Real alpha = temperature_.alpha();
        auto al = actor_loss(policy_, critic_, alpha, b.states, noise, cfg_.weight_actor ? &b.weights : nullptr);
        if (!std::isfinite(al.loss)) throw NumericError("actor update: non-finite loss");
        adam_step(policy_.net().parameters(), al.grads, actor_optim_);

        ParameterSet la;
        la.add("log_alpha", Matrix::Constant(1, 1, temperature_.log_alpha));
        Gradients g{Matrix::Constant(1, 1, temperature_gradient(al.mean_log_prob, temperature_.target_entropy))};
        adam_step(la, g, temperature_.optim);
        temperature_.log_alpha = la[0](0, 0);

        UpdateStats st;
        st.actor_loss = al.loss;
        st.alpha = temperature_.alpha();
        st.entropy = -al.mean_log_prob;
        return st;
    }

    /// Critic step, actor + temperature step, then target tracking.
    UpdateStats update(const buffers::Batch& b, Rng& rng)
    {
        const Real cl = critic_update(b, rng);
        auto st = actor_and_temperature_update(b, rng);
        st.critic_loss = cl;
        polyak_update(critic_, cfg_.polyak);
        return st;
    }

private:
    AgentConfig cfg_;
    GaussianPolicy policy_;
    QuantileCritic critic_;
    AdamState actor_optim_;
    Temperature temperature_;
};

}  // namespace wimle::agent
