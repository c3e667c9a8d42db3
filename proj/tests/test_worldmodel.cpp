#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "test_support.hpp"
#include "wimle/gradcheck.hpp"
#include "wimle/worldmodel.hpp"

using namespace wimle;
using namespace wimle::wm;

namespace {

Matrix col(std::initializer_list<Real> v)
{
    Matrix m(static_cast<Index>(v.size()), 1);
    Index i = 0;
    for (Real x : v) m(i++, 0) = x;
    return m;
}

/// Population variance of all rows of all members, averaged over columns.
Real total_variance(const std::vector<Matrix>& p)
{
    Index n = 0;
    Vector sum = Vector::Zero(p[0].cols());
    for (const auto& m : p) {
        sum += m.colwise().sum().transpose();
        n += m.rows();
    }
    const Vector mean = sum / static_cast<Real>(n);
    Vector var = Vector::Zero(p[0].cols());
    for (const auto& m : p)
        for (Index i = 0; i < m.rows(); ++i) var += (m.row(i).transpose() - mean).cwiseAbs2();
    return (var / static_cast<Real>(n)).mean();
}

}  // namespace

TEST(Generate, ZeroHeadsGiveZeroOutcome)
{
    InitOptions init;
    init.zero_heads = true;
    Rng rng(1);
    WorldModel m(fixtures::small_model(3, 1), rng, init);
    const auto o = generate(m, Vector::Ones(3), Vector::Ones(1), Vector::Constant(4, 0.3));
    EXPECT_EQ(o.reward, 0);
    EXPECT_EQ(o.next_state, Vector::Zero(3));
}

TEST(Generate, DeterministicAndDimensionChecked)
{
    Rng rng(2);
    WorldModel m(fixtures::small_model(2, 1), rng);
    const Vector s = Vector::Constant(2, 0.2), a = Vector::Constant(1, -0.4), z = Vector::Constant(4, 1.1);
    const auto x = generate(m, s, a, z), y = generate(m, s, a, z);
    EXPECT_EQ(x.next_state, y.next_state);
    EXPECT_EQ(x.reward, y.reward);
    EXPECT_THROW(generate(m, Vector::Zero(3), a, z), DimensionError);
    EXPECT_THROW(generate(m, s, a, Vector::Zero(2)), DimensionError);
}

TEST(AssignLatents, SingleCandidateIsIndexZero)
{
    Rng rng(3);
    WorldModel m(fixtures::small_model(2, 1), rng);
    const Matrix S = gradcheck::random_matrix(5, 2, rng), A = gradcheck::random_matrix(5, 1, rng);
    const Matrix Y = gradcheck::random_matrix(5, 3, rng);
    for (int j : assign_latents(m, S, A, Y, sample_latents(1, 4, rng))) EXPECT_EQ(j, 0);
}

TEST(AssignLatents, StubGeneratorPicksNearest)
{
    auto stub = [](const Matrix&, const Matrix&, const Matrix& z) { return Matrix(z); };
    const auto chosen = assign_latents(stub, Matrix::Zero(1, 1), Matrix::Zero(1, 1), col({0.3}), col({0.1, 0.25, 0.9}));
    ASSERT_EQ(chosen.size(), 1u);
    EXPECT_EQ(chosen[0], 1);
}

TEST(AssignLatents, MatchesBruteForce)
{
    Rng rng(4);
    for (int m : {1, 2, 5, 17, 32}) {
        WorldModel model(fixtures::small_model(2, 2, 8, 1), rng);
        const Matrix S = gradcheck::random_matrix(9, 2, rng), A = gradcheck::random_matrix(9, 2, rng);
        const Matrix Y = gradcheck::random_matrix(9, 3, rng);
        const Matrix cand = sample_latents(m, 4, rng);
        const auto chosen = assign_latents(model, S, A, Y, cand);
        for (Index i = 0; i < 9; ++i) {
            int best = 0;
            Real bd = std::numeric_limits<Real>::infinity();
            for (int j = 0; j < m; ++j) {
                const Vector y = generate(model, S.row(i).transpose(), A.row(i).transpose(), cand.row(j).transpose())
                                     .next_state;
                const Real r = generate(model, S.row(i).transpose(), A.row(i).transpose(), cand.row(j).transpose()).reward;
                const Real d = (r - Y(i, 0)) * (r - Y(i, 0)) + (y - Y.row(i).tail(2).transpose()).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = j;
                }
            }
            EXPECT_EQ(chosen[static_cast<std::size_t>(i)], best);
        }
    }
}

TEST(AssignLatents, UsesNoBackwardPasses)
{
    Rng rng(5);
    WorldModel m(fixtures::small_model(2, 1), rng);
    m.net().counter().reset();
    assign_latents(m, gradcheck::random_matrix(6, 2, rng), gradcheck::random_matrix(6, 1, rng),
                   gradcheck::random_matrix(6, 3, rng), sample_latents(4, 4, rng));
    EXPECT_EQ(m.net().counter().forward_rows, 24u);
    EXPECT_EQ(m.net().counter().backward_rows, 0u);
}

TEST(ImleUpdate, ExactTargetGivesZeroLossAndNoChange)
{
    Rng rng(6);
    WorldModel m(fixtures::small_model(2, 1), rng);
    const Matrix S = gradcheck::random_matrix(4, 2, rng), A = gradcheck::random_matrix(4, 1, rng);
    const Matrix cand = sample_latents(3, 4, rng);
    const std::vector<int> chosen{0, 1, 2, 1};
    Matrix Z(4, 4);
    for (Index i = 0; i < 4; ++i) Z.row(i) = cand.row(chosen[static_cast<std::size_t>(i)]);
    const Matrix Y = m.sample(S, A, Z);
    AdamState opt(m.net().parameters(), {});
    const auto before = m.net().parameters().flatten();
    EXPECT_EQ(imle_update(m, S, A, Y, chosen, cand, opt), 0);
    EXPECT_EQ(m.net().parameters().flatten(), before);
}

TEST(ImleUpdate, LinearGeneratorLossIsMonotone)
{
    Rng rng(7);
    // No residual blocks: a linear map of (s, a, z).
    WorldModel m(fixtures::small_model(1, 1, 4, 0), rng);
    const Matrix S = col({0.5}), A = col({-0.2});
    const Matrix Y = Matrix::Constant(1, 2, 3.0);
    const Matrix cand = sample_latents(1, 4, rng);
    AdamState opt(m.net().parameters(), AdamConfig{Real(1e-3)});
    const Real first = imle_update(m, S, A, Y, {0}, cand, opt);
    Real prev = first;
    for (int i = 1; i < 100; ++i) {
        const Real loss = imle_update(m, S, A, Y, {0}, cand, opt);
        EXPECT_LE(loss, prev) << "step " << i;
        prev = loss;
    }
    EXPECT_LT(prev, first);
}

TEST(ImleUpdate, RejectsNonFiniteLoss)
{
    Rng rng(8);
    WorldModel m(fixtures::small_model(1, 1), rng);
    AdamState opt(m.net().parameters(), {});
    Matrix Y = Matrix::Zero(1, 2);
    Y(0, 0) = std::numeric_limits<Real>::infinity();
    const auto before = m.net().parameters().flatten();
    EXPECT_THROW(imle_update(m, col({0}), col({0}), Y, {0}, sample_latents(1, 4, rng), opt), NumericError);
    EXPECT_EQ(m.net().parameters().flatten(), before);
}

TEST(ImleTraining, ForkLossBeatsUnimodalFloorAndSamplesReachBothModes)
{
    const auto store = fixtures::fork_store(20000, 11);
    WorldModelConfig cfg = fixtures::small_model(1, 1, 64, 2);
    cfg.latent_dim = 1;
    auto ens = make_ensemble(cfg, 1, 12);
    TrainSettings ts;
    ts.updates = 3000;
    ts.batch_size = 128;
    ts.candidates = 16;
    const auto traces = train_ensemble(ens, store, ts);
    Real tail = 0;
    for (int i = 0; i < 200; ++i) tail += traces[0][traces[0].size() - 1 - static_cast<std::size_t>(i)];
    tail /= 200;
    const Real floor = envs::fork::kHalfGap * envs::fork::kHalfGap;
    EXPECT_LT(tail, floor);

    // A unimodal fit would put every sample near the midpoint.
    Rng rng(13);
    const auto& model = ens.member(0);
    for (Real s : {-0.8, 0.0, 0.6})
        for (Real a : {-0.5, 0.9}) {
            const auto [lo, hi] = envs::fork_modes(s, a);
            const Matrix Z = sample_latents(1000, cfg.latent_dim, rng);
            const Matrix pred = model.sample(Matrix::Constant(1000, 1, s), Matrix::Constant(1000, 1, a), Z);
            int near_lo = 0, near_hi = 0;
            for (Index i = 0; i < 1000; ++i) {
                near_lo += std::abs(pred(i, 1) - lo) <= 0.1;
                near_hi += std::abs(pred(i, 1) - hi) <= 0.1;
            }
            EXPECT_GE(near_lo, 100) << "s=" << s << " a=" << a;
            EXPECT_GE(near_hi, 100) << "s=" << s << " a=" << a;
        }
}

TEST(TrainEnsemble, ZeroUpdatesLeaveParameters)
{
    const auto store = fixtures::fork_store(100, 1);
    auto ens = make_ensemble(fixtures::small_model(1, 1), 2, 3);
    const auto before = ens.member(1).net().parameters().flatten();
    TrainSettings ts;
    ts.updates = 0;
    const auto traces = train_ensemble(ens, store, ts);
    EXPECT_TRUE(traces[0].empty());
    EXPECT_EQ(ens.member(1).net().parameters().flatten(), before);
}

TEST(TrainEnsemble, SeedingContract)
{
    const auto store = fixtures::fork_store(500, 2);
    TrainSettings ts;
    ts.updates = 20;
    ts.batch_size = 32;
    Ensemble same(fixtures::small_model(1, 1), {77, 77});
    const auto t = train_ensemble(same, store, ts);
    EXPECT_EQ(t[0], t[1]);
    Ensemble diff(fixtures::small_model(1, 1), {77, 78});
    const auto u = train_ensemble(diff, store, ts);
    EXPECT_NE(u[0], u[1]);
    EXPECT_EQ(u[0], t[0]);
}

TEST(TrainEnsemble, EmptyStoreIsContractError)
{
    buffers::ReplayStore empty(10);
    auto ens = make_ensemble(fixtures::small_model(1, 1), 2, 3);
    EXPECT_THROW(train_ensemble(ens, empty, {}), ContractError);
}

TEST(TrainEnsemble, PendulumLossDropsBelowTenPercent)
{
    // Ten training cycles of 100 updates, batch 512, m = 4.
    const auto store = fixtures::pendulum_store(5000, 21);
    WorldModelConfig cfg = fixtures::small_model(3, 1, 128, 3);
    cfg.latent_dim = 16;
    auto ens = make_ensemble(cfg, 1, 22);
    TrainSettings ts;
    std::vector<Real> trace;
    for (int cycle = 0; cycle < 10; ++cycle) {
        const auto t = train_ensemble(ens, store, ts)[0];
        trace.insert(trace.end(), t.begin(), t.end());
    }
    Real last = 0;
    for (std::size_t i = trace.size() - 20; i < trace.size(); ++i) last += trace[i] / 20;
    EXPECT_LT(last, 0.1 * trace.front()) << "init " << trace.front() << " final " << last;
}

TEST(Gaussian, SampleWithZeroLatentIsMean)
{
    Rng rng(30);
    WorldModel m(fixtures::small_model(2, 1, 16, 1, ModelKind::gaussian), rng);
    const Matrix S = gradcheck::random_matrix(3, 2, rng), A = gradcheck::random_matrix(3, 1, rng);
    EXPECT_EQ(m.sample(S, A, Matrix::Zero(3, 4)), m.mean(S, A));
    Rng bad(1);
    WorldModelConfig c = fixtures::small_model(5, 1, 8, 1, ModelKind::gaussian);
    c.latent_dim = 3;
    EXPECT_THROW(WorldModel(c, bad), ContractError);
}

TEST(Gaussian, SoftLogVarStaysInRange)
{
    for (Real raw : {-1e3, -50.0, -10.0, 0.0, 1.9, 2.0, 50.0, 1e3}) {
        Real slope = 0;
        const Real lv = wm::detail::soft_logvar(raw, &slope);
        // The two-sided softplus clamp can overshoot each bound by softplus(-12).
        EXPECT_GE(lv, kMinLogVar - 1e-5);
        EXPECT_LE(lv, kMaxLogVar + 1e-5);
        EXPECT_GE(slope, 0);
        EXPECT_LE(slope, 1);
    }
}

TEST(Gaussian, RegressesForkToMidpoint)
{
    const auto store = fixtures::fork_store(5000, 31);
    auto ens = make_ensemble(fixtures::small_model(1, 1, 32, 2, ModelKind::gaussian), 1, 32);
    TrainSettings ts;
    ts.updates = 1500;
    ts.batch_size = 128;
    train_ensemble(ens, store, ts);
    const auto [lo, hi] = envs::fork_modes(0.2, 0.3);
    const Matrix mu = ens.member(0).mean(Matrix::Constant(1, 1, 0.2), Matrix::Constant(1, 1, 0.3));
    EXPECT_LT(std::abs(mu(0, 1) - (lo + hi) / 2), 0.1);
}

TEST(Uncertainty, WeightExamplesAndMonotonicity)
{
    EXPECT_EQ(confidence_weight(0), 1);
    EXPECT_EQ(confidence_weight(3), 0.25);
    EXPECT_EQ(confidence_weight(1), 0.5);
    EXPECT_THROW(confidence_weight(-0.1), ContractError);
    Real prev = 1;
    for (Real s = 0.01; s < 1e6; s *= 1.5) {
        const Real w = confidence_weight(s);
        EXPECT_GT(w, 0);
        EXPECT_LT(w, prev);
        prev = w;
    }
}

TEST(Uncertainty, SigmaExamples)
{
    EXPECT_EQ(predictive_sigma({col({0}), col({2})}), 1);
    EXPECT_EQ(predictive_sigma({col({0.5, 0.5}), col({0.5, 0.5})}), 0);
}

TEST(Uncertainty, DecomposeExamples)
{
    const auto a = decompose_uncertainty({col({0, 0}), col({2, 2})});
    EXPECT_EQ(a.epistemic, 1);
    EXPECT_EQ(a.aleatoric, 0);
    const auto b = decompose_uncertainty({col({-1, 1}), col({-1, 1})});
    EXPECT_EQ(b.epistemic, 0);
    EXPECT_EQ(b.aleatoric, 1);
    EXPECT_THROW(decompose_uncertainty({col({1, 2})}), ContractError);
    EXPECT_THROW(decompose_uncertainty({col({1}), col({2})}), ContractError);
    EXPECT_THROW(decompose_uncertainty({col({1, 2}), col({1, 2, 3})}), DimensionError);
}

TEST(Uncertainty, TotalVarianceIdentity)
{
    Rng rng(40);
    std::uniform_int_distribution<int> k(2, 9), m(2, 9), d(1, 5);
    for (int t = 0; t < 1000; ++t) {
        std::vector<Matrix> p;
        const int K = k(rng), M = m(rng), D = d(rng);
        for (int i = 0; i < K; ++i) p.push_back(gradcheck::random_matrix(M, D, rng, 3));
        const auto v = decompose_uncertainty(p);
        EXPECT_NEAR(v.epistemic + v.aleatoric, total_variance(p), 1e-12);
        EXPECT_NEAR(v.total, total_variance(p), 1e-12);
        EXPECT_GE(v.epistemic, 0);
        EXPECT_GE(v.aleatoric, 0);
    }
}

TEST(Predict, IdenticalMembersGiveUnitWeight)
{
    InitOptions init;
    init.zero_heads = true;
    Ensemble ens(fixtures::small_model(2, 1), {1, 2, 3}, init);
    Rng rng(41);
    const auto p = predict_with_uncertainty(ens, Vector::Ones(2), Vector::Ones(1), 4, rng);
    EXPECT_EQ(p.uncertainty.sigma, 0);
    EXPECT_EQ(p.weight, 1);
    EXPECT_EQ(p.next_state, Vector::Zero(2));
}

TEST(Predict, UntrainedEnsembleDisagrees)
{
    auto ens = make_ensemble(fixtures::small_model(2, 1), 3, 42);
    Rng rng(43);
    const auto preds = predict_batch(ens, Matrix::Ones(5, 2), Matrix::Ones(5, 1), 4, rng);
    for (const auto& p : preds) {
        EXPECT_GT(p.uncertainty.sigma, 0);
        EXPECT_LT(p.weight, 1);
        EXPECT_DOUBLE_EQ(p.weight, 1 / (p.uncertainty.sigma + 1));
    }
    EXPECT_THROW(predict_batch(ens, Matrix::Ones(5, 2), Matrix::Ones(5, 1), 1, rng), ContractError);
    EXPECT_THROW(predict_batch(ens, Matrix::Ones(5, 3), Matrix::Ones(5, 1), 4, rng), DimensionError);
}

TEST(Predict, CostsKTimesMForwardRowsPerTransition)
{
    auto ens = make_ensemble(fixtures::small_model(2, 1), 3, 44);
    Rng rng(45);
    ens.reset_counters();
    predict_batch(ens, Matrix::Ones(7, 2), Matrix::Ones(7, 1), 4, rng);
    EXPECT_EQ(ens.total_passes().forward_rows, 3u * 4u * 7u);
    EXPECT_EQ(ens.total_passes().backward_rows, 0u);
}

TEST(Predict, EmittedTransitionIsOneOfTheSamples)
{
    auto ens = make_ensemble(fixtures::small_model(1, 1), 2, 46);
    Rng rng(47), replay(47);
    const auto p = predict_batch(ens, Matrix::Constant(1, 1, 0.1), Matrix::Constant(1, 1, 0.2), 3, rng).front();
    const Matrix z = sample_latents(3, 4, replay);
    bool found = false;
    for (int k = 0; k < 2; ++k) {
        const Matrix y = ens.member(k).sample(Matrix::Constant(3, 1, 0.1), Matrix::Constant(3, 1, 0.2), z);
        for (Index j = 0; j < 3; ++j) found |= y(j, 0) == p.reward && y(j, 1) == p.next_state(0);
    }
    EXPECT_TRUE(found);
}
