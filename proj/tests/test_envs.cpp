#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>

#include "wimle/envs.hpp"

using namespace wimle;
using namespace wimle::envs;

namespace {

constexpr double kPi = std::numbers::pi;

// Fine-step RK4 of theta'' = 15 sin(theta) with zero torque.
std::array<double, 2> rk4(double th, double w, double T, int substeps)
{
    const double h = T / substeps;
    auto f = [](double t, double v) { return std::array<double, 2>{v, 15.0 * std::sin(t)}; };
    for (int i = 0; i < substeps; ++i) {
        const auto k1 = f(th, w);
        const auto k2 = f(th + h / 2 * k1[0], w + h / 2 * k1[1]);
        const auto k3 = f(th + h / 2 * k2[0], w + h / 2 * k2[1]);
        const auto k4 = f(th + h * k3[0], w + h * k3[1]);
        th += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
        w += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
    }
    return {th, w};
}

double theta_of(const Vector& s) { return std::atan2(s(1), s(0)); }

}  // namespace

TEST(WrapAngle, RangeIsHalfOpen)
{
    EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
    EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
    EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-12);
    EXPECT_NEAR(wrap_angle(0.3 + 4 * kPi), 0.3, 1e-12);
}

TEST(Pendulum, UprightRestIsEquilibriumWithZeroReward)
{
    const auto r = pendulum_step(pendulum::make_state(0, 0), 0);
    EXPECT_EQ(r.reward, 0);
    EXPECT_EQ(r.next_state, pendulum::make_state(0, 0));
    EXPECT_FALSE(r.terminal);
}

TEST(Pendulum, RewardIsNonPositiveAndMaximalUpright)
{
    Rng rng(1);
    std::uniform_real_distribution<double> th(-kPi, kPi), w(-8, 8), u(-2, 2);
    for (int i = 0; i < 2000; ++i) {
        const double r = pendulum::reward(th(rng), w(rng), u(rng));
        EXPECT_LE(r, 0);
    }
    EXPECT_EQ(pendulum::reward(0, 0, 0), 0);
    EXPECT_LT(pendulum::reward(0, 0, 0.5), 0);
    EXPECT_LT(pendulum::reward(0, 0.1, 0), 0);
}

TEST(Pendulum, SmallSwingMatchesRk4)
{
    // Free swing 0.1 rad from the hanging rest point. Semi-implicit Euler
    // lags RK4 by about theta0 * g' * dt / (2 omega) ~ 0.01 rad here.
    Vector s = pendulum::make_state(kPi - 0.1, 0);
    double max_err = 0;
    for (int t = 1; t <= 50; ++t) {
        s = pendulum_step(s, 0).next_state;
        const auto ref = rk4(kPi - 0.1, 0, t * pendulum::kDt, t * 200);
        max_err = std::max(max_err, std::abs(wrap_angle(theta_of(s) - ref[0])));
    }
    EXPECT_LT(max_err, 1.2e-2);
}

TEST(Pendulum, ClampsTorqueAndSpeed)
{
    const auto a = pendulum_step(pendulum::make_state(1, 0), 100);
    const auto b = pendulum_step(pendulum::make_state(1, 0), 2);
    EXPECT_EQ(a.next_state, b.next_state);
    const auto c = pendulum_step(pendulum::make_state(1, 7.99), 2);
    EXPECT_LE(c.next_state(2), 8);
}

TEST(Pendulum, StaysOnManifold)
{
    Vector s = pendulum::make_state(2.0, -3.0);
    for (int i = 0; i < 500; ++i) {
        s = pendulum_step(s, std::sin(i * 0.1) * 2).next_state;
        EXPECT_NEAR(s(0) * s(0) + s(1) * s(1), 1.0, 1e-12);
    }
}

TEST(Pendulum, OffManifoldStateIsRejected)
{
    Vector s(3);
    s << 1.1, 0, 0;
    EXPECT_THROW(pendulum_step(s, 0), ContractError);
    EXPECT_THROW(pendulum_step(Vector::Zero(2), 0), DimensionError);
}

TEST(Pendulum, TruncatesAt200)
{
    auto env = make_env("pendulum");
    env->reset(3);
    StepResult r;
    for (int t = 0; t < 199; ++t) {
        r = env->step(Vector::Zero(1));
        ASSERT_FALSE(r.truncated);
    }
    r = env->step(Vector::Zero(1));
    EXPECT_TRUE(r.truncated);
    EXPECT_FALSE(r.terminal);
}

TEST(Fork, OriginSplitsIntoTwoEqualModes)
{
    Rng rng(2);
    int up = 0;
    for (int i = 0; i < 1000; ++i) {
        const double s2 = bimodal_fork_step(0, 0, rng).next_state(0);
        ASSERT_TRUE(s2 == 0.5 || s2 == -0.5);
        up += s2 > 0;
    }
    EXPECT_NEAR(up / 1000.0, 0.5, 0.03);
}

TEST(Fork, ConditionalMeanIsTheUnvisitedMidpoint)
{
    const auto [lo, hi] = fork_modes(0, 0);
    EXPECT_EQ((lo + hi) / 2, 0);
    EXPECT_NE(bimodal_fork_step(0, 0, 1).next_state(0), 0);
    EXPECT_NE(bimodal_fork_step(0, 0, -1).next_state(0), 0);
}

TEST(Fork, ClipsAtBoundary)
{
    EXPECT_EQ(bimodal_fork_step(2, 1, 1).next_state(0), 2);
    EXPECT_EQ(bimodal_fork_step(-2, -1, -1).next_state(0), -2);
    const auto r = bimodal_fork_step(0.3, -0.5, 1);
    EXPECT_DOUBLE_EQ(r.next_state(0), 0.3 - 0.05 + 0.5);
    EXPECT_DOUBLE_EQ(r.reward, -std::abs(r.next_state(0)));
}

TEST(Fork, ModesMatchTransitions)
{
    for (double s : {-1.0, -0.2, 0.7})
        for (double a : {-1.0, 0.0, 0.4}) {
            const auto [lo, hi] = fork_modes(s, a);
            EXPECT_DOUBLE_EQ(bimodal_fork_step(s, a, -1).next_state(0), lo);
            EXPECT_DOUBLE_EQ(bimodal_fork_step(s, a, 1).next_state(0), hi);
        }
}

TEST(Fork, TruncatesAt100)
{
    auto env = make_env("bimodal-fork");
    env->reset(4);
    for (int t = 0; t < 99; ++t) ASSERT_FALSE(env->step(Vector::Zero(1)).truncated);
    EXPECT_TRUE(env->step(Vector::Zero(1)).truncated);
}

TEST(Reset, SameSeedSameState)
{
    for (const auto& name : registered_envs()) {
        auto a = make_env(name);
        auto b = make_env(name);
        EXPECT_EQ(a->reset(42), b->reset(42));
        EXPECT_EQ(a->step(Vector::Constant(1, 0.3)).next_state, b->step(Vector::Constant(1, 0.3)).next_state);
        EXPECT_NE(a->reset(42), a->reset(43));
    }
}

TEST(Reset, PendulumInitialStateOnManifold)
{
    auto env = make_env("pendulum");
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Vector s = env->reset(seed);
        EXPECT_NEAR(s(0) * s(0) + s(1) * s(1), 1, 1e-12);
        EXPECT_LE(std::abs(s(2)), 1);
    }
}

TEST(Reset, PendulumAngleUniformChiSquare)
{
    auto env = make_env("pendulum");
    std::array<int, 10> bins{};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const Vector s = env->reset(static_cast<std::uint64_t>(i));
        const double th = theta_of(s);
        const int b = std::min(9, static_cast<int>((th + kPi) / (2 * kPi) * 10));
        ++bins[static_cast<std::size_t>(b)];
    }
    double chi2 = 0;
    for (int c : bins) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
    EXPECT_LT(chi2, 21.666);  // 99th percentile of chi-square with 9 degrees of freedom
}

TEST(Reset, ForkStartsInUnitInterval)
{
    auto env = make_env("bimodal-fork");
    for (std::uint64_t seed = 0; seed < 200; ++seed) EXPECT_LE(std::abs(env->reset(seed)(0)), 1);
}

TEST(Registry, UnknownNameAndStepBeforeReset)
{
    EXPECT_THROW(make_env("cartpole"), ContractError);
    auto env = make_env("pendulum");
    EXPECT_THROW(env->step(Vector::Zero(1)), UsageError);
    env->reset(0);
    EXPECT_THROW(env->step(Vector::Zero(2)), DimensionError);
    EXPECT_EQ(env->spec().state_dim, 3);
    EXPECT_EQ(make_env("bimodal-fork")->spec().action_high(0), 1);
}
