#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/numkit.hpp"
#include "wimle/random.hpp"

namespace wimle::envs {

struct EnvSpec {
    std::string name;
    int state_dim = 1;
    int action_dim = 1;
    Vector action_low;
    Vector action_high;
    int episode_length = 1;
};

struct StepResult {
    Vector next_state;
    Real reward = 0;
    bool terminal = false;
    bool truncated = false;
};

/// Wraps an angle into (-pi, pi].
inline Real wrap_angle(Real theta)
{
    constexpr Real pi = std::numbers::pi_v<Real>;
    Real t = std::fmod(theta + pi, 2 * pi);
    if (t <= 0) t += 2 * pi;
    return t - pi;
}

// ---------------------------------------------------------------------------
// Pendulum swing-up. theta = 0 is upright; state is (cos, sin, theta_dot).
// ---------------------------------------------------------------------------

namespace pendulum {
inline constexpr Real kGravity = 10;
inline constexpr Real kMass = 1;
inline constexpr Real kLength = 1;
inline constexpr Real kDt = Real(0.05);
inline constexpr Real kMaxSpeed = 8;
inline constexpr Real kMaxTorque = 2;
inline constexpr int kEpisodeLength = 200;
inline constexpr Real kManifoldTolerance = Real(1e-6);

inline Vector make_state(Real theta, Real theta_dot)
{
    Vector s(3);
    s << std::cos(theta), std::sin(theta), theta_dot;
    return s;
}

inline Real angular_acceleration(Real theta, Real torque)
{
    return 3 * kGravity / (2 * kLength) * std::sin(theta) + 3 * torque / (kMass * kLength * kLength);
}

inline Real reward(Real theta, Real theta_dot, Real torque)
{
    const Real th = wrap_angle(theta);
    return -(th * th + Real(0.1) * theta_dot * theta_dot + Real(0.001) * torque * torque);
}
}  // namespace pendulum

/// One semi-implicit Euler step. Truncation is left to the caller.
inline StepResult pendulum_step(const Vector& state, Real torque)
{
    using namespace pendulum;
    detail::require_dims(state.size() == 3, "pendulum_step: state must be (cos, sin, theta_dot)");
    const Real r2 = state(0) * state(0) + state(1) * state(1);
    detail::require(std::abs(r2 - 1) <= kManifoldTolerance,
                    "pendulum_step: state is off the cos^2 + sin^2 = 1 manifold");
    const Real theta = std::atan2(state(1), state(0));
    const Real u = std::clamp(torque, -kMaxTorque, kMaxTorque);

    StepResult out;
    out.reward = reward(theta, state(2), u);
    const Real new_dot = std::clamp(state(2) + angular_acceleration(theta, u) * kDt, -kMaxSpeed, kMaxSpeed);
    out.next_state = make_state(theta + new_dot * kDt, new_dot);
    return out;
}

// ---------------------------------------------------------------------------
// Bimodal fork: s' = clip(s + 0.1 a + c * delta, -2, 2), c uniform on {-1, +1}.
// ---------------------------------------------------------------------------

namespace fork {
inline constexpr Real kHalfGap = Real(0.5);
inline constexpr Real kDrift = Real(0.1);
inline constexpr Real kBound = 2;
inline constexpr int kEpisodeLength = 100;
}  // namespace fork

/// Exact two outcomes (lower, upper) of the fork for (s, a), before clipping.
inline std::pair<Real, Real> fork_modes(Real s, Real a)
{
    const Real centre = s + fork::kDrift * a;
    return {centre - fork::kHalfGap, centre + fork::kHalfGap};
}

/// Deterministic form with the branch `coin` in {-1, +1}.
inline StepResult bimodal_fork_step(Real s, Real a, int coin)
{
    detail::require(std::abs(s) <= fork::kBound, "bimodal_fork_step: state out of bounds");
    detail::require(coin == 1 || coin == -1, "bimodal_fork_step: coin must be +-1");
    const Real act = std::clamp(a, Real(-1), Real(1));
    const Real next =
        std::clamp(s + fork::kDrift * act + static_cast<Real>(coin) * fork::kHalfGap, -fork::kBound, fork::kBound);
    StepResult out;
    out.next_state = Vector::Constant(1, next);
    out.reward = -std::abs(next);
    return out;
}

inline StepResult bimodal_fork_step(Real s, Real a, Rng& rng)
{
    std::bernoulli_distribution coin(0.5);
    return bimodal_fork_step(s, a, coin(rng) ? 1 : -1);
}

// ---------------------------------------------------------------------------
// Stateful environments
// ---------------------------------------------------------------------------

class Environment {
public:
    virtual ~Environment() = default;
    virtual const EnvSpec& spec() const = 0;

    /// Starts an episode; the initial state and every later random draw of
    /// the episode are determined by `seed`.
    Vector reset(std::uint64_t seed)
    {
        rng_.seed(seed);
        t_ = 0;
        state_ = initial_state(rng_);
        return state_;
    }

    StepResult step(const Vector& action)
    {
        if (state_.size() == 0) throw UsageError("Environment::step called before reset");
        detail::require_dims(action.size() == spec().action_dim, "Environment::step: action dimension");
        StepResult r = transition(state_, action, rng_);
        ++t_;
        if (!r.terminal && t_ >= spec().episode_length) r.truncated = true;
        state_ = r.next_state;
        return r;
    }

    const Vector& state() const noexcept { return state_; }
    int elapsed() const noexcept { return t_; }

protected:
    virtual Vector initial_state(Rng& rng) const = 0;
    virtual StepResult transition(const Vector& s, const Vector& a, Rng& rng) const = 0;

private:
    Rng rng_;
    Vector state_;
    int t_ = 0;
};

class Pendulum final : public Environment {
public:
    Pendulum()
    {
        spec_.name = "pendulum";
        spec_.state_dim = 3;
        spec_.action_dim = 1;
        spec_.action_low = Vector::Constant(1, -pendulum::kMaxTorque);
        spec_.action_high = Vector::Constant(1, pendulum::kMaxTorque);
        spec_.episode_length = pendulum::kEpisodeLength;
    }
    const EnvSpec& spec() const override { return spec_; }

protected:
    Vector initial_state(Rng& rng) const override
    {
        std::uniform_real_distribution<Real> theta(-std::numbers::pi_v<Real>, std::numbers::pi_v<Real>);
        std::uniform_real_distribution<Real> vel(-1, 1);
        const Real th = theta(rng);
        return pendulum::make_state(th, vel(rng));
    }
    StepResult transition(const Vector& s, const Vector& a, Rng&) const override
    {
        return pendulum_step(s, a(0));
    }

private:
    EnvSpec spec_;
};

class BimodalFork final : public Environment {
public:
    BimodalFork()
    {
        spec_.name = "bimodal-fork";
        spec_.state_dim = 1;
        spec_.action_dim = 1;
        spec_.action_low = Vector::Constant(1, -1);
        spec_.action_high = Vector::Constant(1, 1);
        spec_.episode_length = fork::kEpisodeLength;
    }
    const EnvSpec& spec() const override { return spec_; }

protected:
    Vector initial_state(Rng& rng) const override
    {
        std::uniform_real_distribution<Real> u(-1, 1);
        return Vector::Constant(1, u(rng));
    }
    StepResult transition(const Vector& s, const Vector& a, Rng& rng) const override
    {
        return bimodal_fork_step(s(0), a(0), rng);
    }

private:
    EnvSpec spec_;
};

inline std::vector<std::string> registered_envs() { return {"pendulum", "bimodal-fork"}; }

inline std::unique_ptr<Environment> make_env(const std::string& name)
{
    if (name == "pendulum") return std::make_unique<Pendulum>();
    if (name == "bimodal-fork") return std::make_unique<BimodalFork>();
    throw ContractError("unknown environment '" + name + "' (known: pendulum, bimodal-fork)");
}

}  // namespace wimle::envs
