#pragma once

// Conditional IMLE world models and their ensemble: nearest-candidate latent
// assignment, the assigned-latent regression update, ensemble training on
// independently resampled minibatches, and predictive uncertainty from K x m
// sampled predictions.
//
// Targets and predictions are laid out reward-first: y = [r, s'].

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/numkit.hpp"
#include "wimle/random.hpp"
#include "wimle/transition.hpp"

namespace wimle::wm {

enum class ModelKind { imle, gaussian };

inline std::string to_string(ModelKind k) { return k == ModelKind::imle ? "imle" : "gaussian"; }

inline ModelKind parse_model_kind(const std::string& s)
{
    if (s == "imle") return ModelKind::imle;
    if (s == "gaussian") return ModelKind::gaussian;
    throw ContractError("unknown world-model variant '" + s + "' (expected imle|gaussian)");
}

struct WorldModelConfig {
    int state_dim = 1;
    int action_dim = 1;
    int latent_dim = 16;
    int width = 512;
    int blocks = 3;
    ModelKind kind = ModelKind::imle;
    AdamConfig adam{Real(1e-3)};
    /// Scale assignment distances and the regression loss by running target std.
    bool normalize_targets = false;

    int output_dim() const { return 1 + state_dim; }
};

/// Bounds of the soft-clamped log-variance head of the Gaussian variant.
inline constexpr Real kMaxLogVar = 2;
inline constexpr Real kMinLogVar = -10;

namespace detail {

inline Real softplus(Real x) { return x > 20 ? x : std::log1p(std::exp(x)); }
inline Real sigmoid(Real x) { return 1 / (1 + std::exp(-x)); }

/// Soft clamp of a raw log-variance into (kMinLogVar, kMaxLogVar); `slope`
/// receives d(out)/d(raw).
inline Real soft_logvar(Real raw, Real* slope)
{
    const Real hi = kMaxLogVar - softplus(kMaxLogVar - raw);
    const Real out = kMinLogVar + softplus(hi - kMinLogVar);
    if (slope) *slope = sigmoid(kMaxLogVar - raw) * sigmoid(hi - kMinLogVar);
    return out;
}

}  // namespace detail

/// Running per-dimension mean/variance of targets (Welford).
struct TargetScaler {
    Vector mean;
    Vector m2;
    double count = 0;

    void update(const Matrix& y)
    {
        if (mean.size() == 0) {
            mean = Vector::Zero(y.cols());
            m2 = Vector::Zero(y.cols());
        }
        for (Index i = 0; i < y.rows(); ++i) {
            count += 1;
            const Vector x = y.row(i).transpose();
            const Vector d = x - mean;
            mean += d / static_cast<Real>(count);
            m2 += d.cwiseProduct(x - mean);
        }
    }

    /// Inverse standard deviation per dimension (1 when no data yet).
    Vector inv_scale(Index dims) const
    {
        if (count < 2) return Vector::Ones(dims);
        Vector v = (m2 / static_cast<Real>(count)).cwiseMax(Real(1e-12));
        return v.cwiseSqrt().cwiseInverse();
    }
};

/// One conditional generator g(s, a, z) -> [r, s'].
///
/// The IMLE variant feeds [s, a, z] through the residual body with a reward
/// head and a state head. The Gaussian baseline maps [s, a] to a mean and a
/// log-variance and reparameterizes with the first output_dim() latent entries,
/// so both variants expose the same sampling interface.
class WorldModel {
public:
    WorldModel() = default;

    WorldModel(const WorldModelConfig& cfg, Rng& init_rng, InitOptions init = {}) : cfg_(cfg)
    {
        wimle::detail::require(cfg.state_dim >= 1 && cfg.action_dim >= 1 && cfg.latent_dim >= 1,
                               "WorldModelConfig: dimensions must be positive");
        Architecture arch;
        arch.kind = Architecture::Kind::residual;
        arch.width = cfg.width;
        arch.depth = cfg.blocks;
        if (cfg.kind == ModelKind::imle) {
            arch.input = cfg.state_dim + cfg.action_dim + cfg.latent_dim;
            arch.heads = {1, cfg.state_dim};
            arch.head_names = {"reward", "state"};
        } else {
            wimle::detail::require(cfg.latent_dim >= cfg.output_dim(),
                                   "Gaussian world model needs latent_dim >= 1 + state_dim");
            arch.input = cfg.state_dim + cfg.action_dim;
            arch.heads = {1, cfg.state_dim, 1, cfg.state_dim};
            arch.head_names = {"reward", "state", "reward_logvar", "state_logvar"};
        }
        net_ = Network(arch, init_rng, init);
    }

    const WorldModelConfig& config() const noexcept { return cfg_; }
    Network& net() noexcept { return net_; }
    const Network& net() const noexcept { return net_; }
    TargetScaler& scaler() noexcept { return scaler_; }
    const TargetScaler& scaler() const noexcept { return scaler_; }

    /// Batched sampling: one prediction per row of (S, A, Z).
    Matrix sample(const Matrix& S, const Matrix& A, const Matrix& Z) const
    {
        check_rows(S, A);
        wimle::detail::require_dims(Z.rows() == S.rows() && Z.cols() == cfg_.latent_dim,
                                    "WorldModel::sample: latent batch shape");
        if (cfg_.kind == ModelKind::imle) return net_.forward(join(S, A, &Z));
        const Matrix out = net_.forward(join(S, A, nullptr));
        const Index d = cfg_.output_dim();
        Matrix y = out.leftCols(d);
        for (Index i = 0; i < y.rows(); ++i)
            for (Index j = 0; j < d; ++j)
                y(i, j) += std::exp(Real(0.5) * detail::soft_logvar(out(i, d + j), nullptr)) * Z(i, j);
        return y;
    }

    /// Gaussian variant only: mean prediction without sampling.
    Matrix mean(const Matrix& S, const Matrix& A) const
    {
        wimle::detail::require(cfg_.kind == ModelKind::gaussian, "WorldModel::mean: Gaussian variant only");
        check_rows(S, A);
        return net_.forward(join(S, A, nullptr)).leftCols(cfg_.output_dim());
    }

    Matrix input_for(const Matrix& S, const Matrix& A, const Matrix* Z) const { return join(S, A, Z); }

private:
    void check_rows(const Matrix& S, const Matrix& A) const
    {
        wimle::detail::require_dims(S.cols() == cfg_.state_dim && A.cols() == cfg_.action_dim &&
                                        S.rows() == A.rows(),
                                    "WorldModel: state/action batch shape does not match the model");
    }

    Matrix join(const Matrix& S, const Matrix& A, const Matrix* Z) const
    {
        Matrix x(S.rows(), net_.architecture().input);
        x.leftCols(S.cols()) = S;
        x.middleCols(S.cols(), A.cols()) = A;
        if (Z) x.rightCols(Z->cols()) = *Z;
        return x;
    }

    WorldModelConfig cfg_;
    Network net_;
    TargetScaler scaler_;
};

struct Outcome {
    Vector next_state;
    Real reward = 0;
};

/// Single-sample generation: one forward pass, no iterative refinement.
inline Outcome generate(const WorldModel& model, const Vector& s, const Vector& a, const Vector& z)
{
    const Matrix y = model.sample(s.transpose(), a.transpose(), z.transpose());
    return {y.row(0).tail(model.config().state_dim).transpose(), y(0, 0)};
}

inline Matrix sample_latents(Index m, int latent_dim, Rng& rng)
{
    std::normal_distribution<Real> n(0, 1);
    Matrix z(m, latent_dim);
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    return z;
}

/// Repeats each row of `x` `times` times consecutively (row i*times + j = x.row(i)).
inline Matrix repeat_rows(const Matrix& x, Index times)
{
    Matrix out(x.rows() * times, x.cols());
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < times; ++j) out.row(i * times + j) = x.row(i);
    return out;
}

/// Tiles the whole block `times` times (row i*n + j = x.row(j)).
inline Matrix tile_rows(const Matrix& x, Index times)
{
    Matrix out(x.rows() * times, x.cols());
    for (Index i = 0; i < times; ++i) out.middleRows(i * x.rows(), x.rows()) = x;
    return out;
}

/// Nearest candidate per datum. `generator(S, A, Z)` returns one prediction per
/// row; the same candidate pool is evaluated for every datum. Distances are
/// squared Euclidean, optionally scaled per dimension by `inv_scale`.
template <class Generator>
    requires std::invocable<Generator&, const Matrix&, const Matrix&, const Matrix&>
std::vector<int> assign_latents(Generator&& generator, const Matrix& S, const Matrix& A, const Matrix& Y,
                                const Matrix& candidates, const Vector* inv_scale = nullptr)
{
    const Index n = S.rows();
    const Index m = candidates.rows();
    wimle::detail::require(m >= 1, "assign_latents: need at least one candidate latent");
    wimle::detail::require_dims(A.rows() == n && Y.rows() == n, "assign_latents: batch sizes differ");
    const Matrix pred = generator(repeat_rows(S, m), repeat_rows(A, m), tile_rows(candidates, n));
    wimle::detail::require_dims(pred.rows() == n * m && pred.cols() == Y.cols(),
                                "assign_latents: generator output does not match targets");
    std::vector<int> chosen(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) {
        Real best = std::numeric_limits<Real>::infinity();
        for (Index j = 0; j < m; ++j) {
            auto diff = (pred.row(i * m + j) - Y.row(i)).transpose();
            const Real d = inv_scale ? diff.cwiseProduct(*inv_scale).squaredNorm() : diff.squaredNorm();
            if (d < best) {
                best = d;
                chosen[static_cast<std::size_t>(i)] = static_cast<int>(j);
            }
        }
    }
    return chosen;
}

inline std::vector<int> assign_latents(const WorldModel& model, const Matrix& S, const Matrix& A, const Matrix& Y,
                                       const Matrix& candidates)
{
    Vector scale;
    const bool scaled = model.config().normalize_targets;
    if (scaled) scale = model.scaler().inv_scale(Y.cols());
    return assign_latents([&](const Matrix& s, const Matrix& a, const Matrix& z) { return model.sample(s, a, z); },
                          S, A, Y, candidates, scaled ? &scale : nullptr);
}

/// Mean over the batch of the squared error between g(s, a, z*) and y, and its
/// gradient, for the IMLE variant.
inline Real imle_loss_and_grad(const WorldModel& model, const Matrix& S, const Matrix& A, const Matrix& Y,
                               const Matrix& Zstar, Gradients& grads)
{
    Tape tape;
    const Matrix pred = model.net().forward(model.input_for(S, A, &Zstar), &tape);
    const Matrix diff = pred - Y;
    const Real n = static_cast<Real>(Y.rows());
    if (model.config().normalize_targets) {
        const Vector s2 = model.scaler().inv_scale(Y.cols()).cwiseAbs2();
        const Matrix scaled = diff * s2.asDiagonal();
        model.net().backward(tape, scaled * (Real(2) / n), grads);
        return diff.cwiseProduct(scaled).sum() / n;
    }
    model.net().backward(tape, diff * (Real(2) / n), grads);
    return diff.squaredNorm() / n;
}

/// One IMLE update step on the assigned latents; returns the pre-step loss.
inline Real imle_update(WorldModel& model, const Matrix& S, const Matrix& A, const Matrix& Y,
                        const std::vector<int>& chosen, const Matrix& candidates, AdamState& optim)
{
    wimle::detail::require(model.config().kind == ModelKind::imle, "imle_update: IMLE variant only");
    wimle::detail::require_dims(chosen.size() == static_cast<std::size_t>(S.rows()),
                                "imle_update: one chosen latent per datum");
    Matrix Zstar(S.rows(), candidates.cols());
    for (Index i = 0; i < S.rows(); ++i) {
        const int j = chosen[static_cast<std::size_t>(i)];
        wimle::detail::require(j >= 0 && j < candidates.rows(), "imle_update: chosen index out of range");
        Zstar.row(i) = candidates.row(j);
    }
    Gradients grads = model.net().zero_gradients();
    const Real loss = imle_loss_and_grad(model, S, A, Y, Zstar, grads);
    if (!std::isfinite(loss)) throw NumericError("imle_update: non-finite loss, step rejected");
    adam_step(model.net().parameters(), grads, optim);
    return loss;
}

/// Gaussian negative log-likelihood (up to a constant), averaged over the batch.
inline Real gaussian_nll_and_grad(const WorldModel& model, const Matrix& S, const Matrix& A, const Matrix& Y,
                                  Gradients& grads)
{
    const Index d = model.config().output_dim();
    const Index n = S.rows();
    Tape tape;
    const Matrix out = model.net().forward(model.input_for(S, A, nullptr), &tape);
    Matrix g(n, 2 * d);
    Real loss = 0;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) {
            Real slope = 0;
            const Real lv = detail::soft_logvar(out(i, d + j), &slope);
            const Real inv_var = std::exp(-lv);
            const Real e = out(i, j) - Y(i, j);
            loss += Real(0.5) * (e * e * inv_var + lv);
            g(i, j) = e * inv_var / static_cast<Real>(n);
            g(i, d + j) = Real(0.5) * (1 - e * e * inv_var) * slope / static_cast<Real>(n);
        }
    }
    model.net().backward(tape, g, grads);
    return loss / static_cast<Real>(n);
}

inline Real gaussian_update(WorldModel& model, const Matrix& S, const Matrix& A, const Matrix& Y, AdamState& optim)
{
    wimle::detail::require(model.config().kind == ModelKind::gaussian, "gaussian_update: Gaussian variant only");
    Gradients grads = model.net().zero_gradients();
    const Real loss = gaussian_nll_and_grad(model, S, A, Y, grads);
    if (!std::isfinite(loss)) throw NumericError("gaussian_update: non-finite loss, step rejected");
    adam_step(model.net().parameters(), grads, optim);
    return loss;
}

/// Reward-first targets [r, s'] for a batch.
inline Matrix targets(const buffers::Batch& b)
{
    Matrix y(b.size(), 1 + b.next_states.cols());
    y.col(0) = b.rewards;
    y.rightCols(b.next_states.cols()) = b.next_states;
    return y;
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

/// K independently initialized members sharing one architecture. Each member
/// owns its optimizer state and its own RNG stream for minibatches and latents.
class Ensemble {
public:
    Ensemble() = default;

    Ensemble(const WorldModelConfig& cfg, const std::vector<std::uint64_t>& member_seeds,
             InitOptions init = {})
        : cfg_(cfg)
    {
        wimle::detail::require(!member_seeds.empty(), "Ensemble: need at least one member");
        for (auto seed : member_seeds) {
            SeedSequence seq(seed);
            Rng init_rng = seq.stream("init");
            members_.emplace_back(cfg, init_rng, init);
            optim_.emplace_back(members_.back().net().parameters(), cfg.adam);
            rngs_.push_back(seq.stream("train"));
        }
    }

    const WorldModelConfig& config() const noexcept { return cfg_; }
    int size() const noexcept { return static_cast<int>(members_.size()); }
    WorldModel& member(int k) { return members_.at(static_cast<std::size_t>(k)); }
    const WorldModel& member(int k) const { return members_.at(static_cast<std::size_t>(k)); }
    AdamState& optimizer(int k) { return optim_.at(static_cast<std::size_t>(k)); }
    Rng& rng(int k) { return rngs_.at(static_cast<std::size_t>(k)); }

    void reset_counters() const
    {
        for (const auto& m : members_) m.net().counter().reset();
    }
    PassCounter total_passes() const
    {
        PassCounter c;
        for (const auto& m : members_) {
            c.forward_rows += m.net().counter().forward_rows;
            c.backward_rows += m.net().counter().backward_rows;
        }
        return c;
    }

private:
    WorldModelConfig cfg_;
    std::vector<WorldModel> members_;
    std::vector<AdamState> optim_;
    std::vector<Rng> rngs_;
};

/// K member seeds derived from one run seed.
inline Ensemble make_ensemble(const WorldModelConfig& cfg, int k, std::uint64_t seed, InitOptions init = {})
{
    wimle::detail::require(k >= 1, "make_ensemble: K must be at least 1");
    SeedSequence seq(seed);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < k; ++i) seeds.push_back(seq.derive("world-model.member", static_cast<std::uint64_t>(i)));
    return Ensemble(cfg, seeds, init);
}

struct TrainSettings {
    int updates = 100;
    int candidates = 4;
    int batch_size = 512;
};

/// Trains every member for `updates` assignment+update iterations on its own
/// with-replacement minibatches and its own candidate latents. Returns the
/// per-member pre-step loss traces.
inline std::vector<std::vector<Real>> train_ensemble(Ensemble& ens, const buffers::ReplayStore& env_store,
                                                     const TrainSettings& ts)
{
    if (env_store.empty()) throw ContractError("train_ensemble: environment store is empty");
    wimle::detail::require(ts.updates >= 0 && ts.candidates >= 1 && ts.batch_size >= 1,
                           "train_ensemble: invalid settings");
    std::vector<std::vector<Real>> traces(static_cast<std::size_t>(ens.size()));
    for (int k = 0; k < ens.size(); ++k) {
        auto& model = ens.member(k);
        auto& rng = ens.rng(k);
        auto& trace = traces[static_cast<std::size_t>(k)];
        trace.reserve(static_cast<std::size_t>(ts.updates));
        for (int u = 0; u < ts.updates; ++u) {
            const auto batch = env_store.sample(static_cast<std::size_t>(ts.batch_size), rng);
            const Matrix y = targets(batch);
            if (model.config().normalize_targets) model.scaler().update(y);
            if (model.config().kind == ModelKind::imle) {
                const Matrix cand = sample_latents(ts.candidates, model.config().latent_dim, rng);
                const auto chosen = assign_latents(model, batch.states, batch.actions, y, cand);
                trace.push_back(imle_update(model, batch.states, batch.actions, y, chosen, cand, ens.optimizer(k)));
            } else {
                trace.push_back(gaussian_update(model, batch.states, batch.actions, y, ens.optimizer(k)));
            }
        }
    }
    return traces;
}

// ---------------------------------------------------------------------------
// Uncertainty
// ---------------------------------------------------------------------------

struct UncertaintyReport {
    Real sigma = 0;
    Real epistemic = 0;
    Real aleatoric = 0;
};

struct VarianceSplit {
    Real epistemic = 0;
    Real aleatoric = 0;
    Real total = 0;
};

/// Confidence weight 1 / (sigma + 1).
inline Real confidence_weight(Real sigma)
{
    wimle::detail::require(sigma >= 0, "confidence_weight: sigma must be non-negative");
    return 1 / (sigma + 1);
}

namespace detail {

/// Law-of-total-variance split over members x latents, per output dimension
/// then averaged. Population (1/N) moments throughout.
inline VarianceSplit split_variance(const std::vector<Matrix>& per_member)
{
    const auto k = static_cast<Real>(per_member.size());
    const Index d = per_member.front().cols();
    Vector grand = Vector::Zero(d);
    Vector within = Vector::Zero(d);
    Matrix means(static_cast<Index>(per_member.size()), d);
    for (std::size_t i = 0; i < per_member.size(); ++i) {
        const Matrix& p = per_member[i];
        const Vector mu = p.colwise().mean().transpose();
        means.row(static_cast<Index>(i)) = mu.transpose();
        within += (p.rowwise() - mu.transpose()).cwiseAbs2().colwise().mean().transpose();
        grand += mu;
    }
    grand /= k;
    const Vector between = (means.rowwise() - grand.transpose()).cwiseAbs2().colwise().mean().transpose();
    within /= k;

    Index total_rows = 0;
    Vector total = Vector::Zero(d);
    for (const auto& p : per_member) {
        total += (p.rowwise() - grand.transpose()).cwiseAbs2().colwise().sum().transpose();
        total_rows += p.rows();
    }
    total /= static_cast<Real>(total_rows);
    return {between.mean(), within.mean(), total.mean()};
}

}  // namespace detail

/// Epistemic (variance of member means) and aleatoric (mean of member
/// variances) parts of the predictive variance. per_member[k] is [m x D].
inline VarianceSplit decompose_uncertainty(const std::vector<Matrix>& per_member)
{
    if (per_member.size() < 2) throw ContractError("decompose_uncertainty: epistemic part undefined for K < 2");
    const Index m = per_member.front().rows();
    if (m < 2) throw ContractError("decompose_uncertainty: aleatoric part undefined for m < 2");
    for (const auto& p : per_member)
        wimle::detail::require_dims(p.rows() == m && p.cols() == per_member.front().cols(),
                                    "decompose_uncertainty: members must share [m x D] shape");
    return detail::split_variance(per_member);
}

/// Mean over output dimensions of the population standard deviation across
/// all rows of all members.
inline Real predictive_sigma(const std::vector<Matrix>& per_member)
{
    const Index d = per_member.front().cols();
    Vector sum = Vector::Zero(d);
    Index n = 0;
    for (const auto& p : per_member) {
        sum += p.colwise().sum().transpose();
        n += p.rows();
    }
    const Vector mean = sum / static_cast<Real>(n);
    Vector var = Vector::Zero(d);
    for (const auto& p : per_member) var += (p.rowwise() - mean.transpose()).cwiseAbs2().colwise().sum().transpose();
    var /= static_cast<Real>(n);
    return var.cwiseSqrt().mean();
}

struct Prediction {
    Vector next_state;
    Real reward = 0;
    UncertaintyReport uncertainty;
    Real weight = 1;
};

/// Batched prediction for B (s, a) rows: m latents are drawn once and shared
/// by every member and row; each row gets sigma, its split, w = 1/(sigma+1)
/// and one uniformly chosen member/latent sample as the emitted transition.
inline std::vector<Prediction> predict_batch(const Ensemble& ens, const Matrix& S, const Matrix& A, int m, Rng& rng)
{
    wimle::detail::require(m >= 2, "predict_with_uncertainty: need m >= 2 latents per member");
    const auto& cfg = ens.config();
    wimle::detail::require_dims(S.cols() == cfg.state_dim && A.cols() == cfg.action_dim && S.rows() == A.rows(),
                                "predict_with_uncertainty: state/action dimensions do not match the ensemble");
    const Index n = S.rows();
    const int k = ens.size();
    const Matrix z = sample_latents(m, cfg.latent_dim, rng);
    const Matrix Srep = repeat_rows(S, m);
    const Matrix Arep = repeat_rows(A, m);
    const Matrix Zrep = tile_rows(z, n);

    std::vector<Matrix> preds;
    preds.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) preds.push_back(ens.member(i).sample(Srep, Arep, Zrep));

    std::uniform_int_distribution<int> pick(0, k * m - 1);
    std::vector<Prediction> out(static_cast<std::size_t>(n));
    std::vector<Matrix> rows(static_cast<std::size_t>(k));
    for (Index r = 0; r < n; ++r) {
        for (int i = 0; i < k; ++i) rows[static_cast<std::size_t>(i)] = preds[static_cast<std::size_t>(i)].middleRows(r * m, m);
        auto& p = out[static_cast<std::size_t>(r)];
        p.uncertainty.sigma = predictive_sigma(rows);
        const auto split = detail::split_variance(rows);
        p.uncertainty.epistemic = split.epistemic;
        p.uncertainty.aleatoric = split.aleatoric;
        p.weight = confidence_weight(p.uncertainty.sigma);
        const int c = pick(rng);
        const auto& chosen = rows[static_cast<std::size_t>(c / m)].row(c % m);
        p.reward = chosen(0);
        p.next_state = chosen.tail(cfg.state_dim).transpose();
    }
    return out;
}

inline Prediction predict_with_uncertainty(const Ensemble& ens, const Vector& s, const Vector& a, int m, Rng& rng)
{
    return predict_batch(ens, s.transpose(), a.transpose(), m, rng).front();
}

}  // namespace wimle::wm
