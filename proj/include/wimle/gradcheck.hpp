#pragma once

// Central finite-difference checks of the analytic gradients of every trained
// network: world model (IMLE and Gaussian), quantile critic and policy.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wimle/agent.hpp"
#include "wimle/numkit.hpp"
#include "wimle/transition.hpp"
#include "wimle/worldmodel.hpp"

namespace wimle::gradcheck {

struct Options {
    Real step = Real(1e-5);
    Real tolerance = Real(1e-4);
    /// Denominator floor for the relative error.
    Real floor = Real(1e-7);
};

struct Report {
    std::string name;
    std::size_t checked = 0;
    std::size_t failures = 0;
    Real max_rel_error = 0;
    std::string worst;

    bool ok() const noexcept { return failures == 0; }
};

inline Real relative_error(Real analytic, Real numeric, Real floor)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` with central differences of `loss` for every scalar in
/// `params`. A ReLU kink inside [x - h, x + h] corrupts the difference
/// quotient, so an entry that misses the tolerance is re-measured with h/10
/// and h/100 and the smallest error is kept.
inline Report compare(const std::string& name, ParameterSet& params, const Gradients& analytic,
                      const std::function<Real()>& loss, const Options& opt = {})
{
    detail::require_dims(analytic.size() == params.size(), "gradcheck: one gradient per parameter");
    Report rep;
    rep.name = name;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto v = params.value(p);
        for (Index k = 0; k < v.size(); ++k) {
            const Real orig = v.data()[k];
            const Real a = analytic[p].data()[k];
            Real best = std::numeric_limits<Real>::infinity();
            for (Real h = opt.step; h >= opt.step / 100; h /= 10) {
                v.data()[k] = orig + h;
                const Real up = loss();
                v.data()[k] = orig - h;
                const Real down = loss();
                v.data()[k] = orig;
                best = std::min(best, relative_error(a, (up - down) / (2 * h), opt.floor));
                if (best <= opt.tolerance) break;
            }
            ++rep.checked;
            if (best > opt.tolerance) ++rep.failures;
            if (best > rep.max_rel_error) {
                rep.max_rel_error = best;
                rep.worst = params.name(p) + "[" + std::to_string(k) + "]";
            }
        }
    }
    return rep;
}

inline Matrix random_matrix(Index r, Index c, Rng& rng, Real scale = 1)
{
    std::normal_distribution<Real> n(0, scale);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

/// Plain network backward against <forward(x), G> for a random upstream G.
inline Report check_network(Network& net, Rng& rng, Index rows = 3, const Options& opt = {})
{
    const Matrix x = random_matrix(rows, net.architecture().input, rng);
    const Matrix up = random_matrix(rows, net.architecture().output(), rng);
    Tape tape;
    net.forward(x, &tape);
    Gradients g = net.zero_gradients();
    net.backward(tape, up, g);
    return compare("network", net.parameters(), g, [&] { return net.forward(x).cwiseProduct(up).sum(); }, opt);
}

/// Input gradient of a network against <forward(x), G>.
inline Report check_input_gradient(const Network& net, Rng& rng, Index rows = 3, const Options& opt = {})
{
    Matrix x = random_matrix(rows, net.architecture().input, rng);
    const Matrix up = random_matrix(rows, net.architecture().output(), rng);
    Tape tape;
    net.forward(x, &tape);
    Gradients scratch = net.zero_gradients();
    const Matrix dx = net.backward(tape, up, scratch);
    ParameterSet ps;
    ps.add("x", x);
    return compare("network.input", ps, Gradients{dx},
                   [&] { return net.forward(ps[0]).cwiseProduct(up).sum(); }, opt);
}

inline Report check_imle_loss(wm::WorldModel& model, Rng& rng, Index rows = 4, const Options& opt = {})
{
    const auto& c = model.config();
    const Matrix S = random_matrix(rows, c.state_dim, rng);
    const Matrix A = random_matrix(rows, c.action_dim, rng);
    const Matrix Y = random_matrix(rows, c.output_dim(), rng);
    const Matrix Z = random_matrix(rows, c.latent_dim, rng);
    Gradients g = model.net().zero_gradients();
    wm::imle_loss_and_grad(model, S, A, Y, Z, g);
    return compare("world-model.imle", model.net().parameters(), g, [&] {
        Gradients scratch = model.net().zero_gradients();
        return wm::imle_loss_and_grad(model, S, A, Y, Z, scratch);
    }, opt);
}

inline Report check_gaussian_nll(wm::WorldModel& model, Rng& rng, Index rows = 4, const Options& opt = {})
{
    const auto& c = model.config();
    const Matrix S = random_matrix(rows, c.state_dim, rng);
    const Matrix A = random_matrix(rows, c.action_dim, rng);
    const Matrix Y = random_matrix(rows, c.output_dim(), rng);
    Gradients g = model.net().zero_gradients();
    wm::gaussian_nll_and_grad(model, S, A, Y, g);
    return compare("world-model.gaussian", model.net().parameters(), g, [&] {
        Gradients scratch = model.net().zero_gradients();
        return wm::gaussian_nll_and_grad(model, S, A, Y, scratch);
    }, opt);
}

inline buffers::Batch random_batch(int sd, int ad, Index rows, Rng& rng)
{
    std::uniform_real_distribution<Real> w(Real(0.1), 1);
    buffers::Batch b;
    b.states = random_matrix(rows, sd, rng);
    b.actions = random_matrix(rows, ad, rng, Real(0.5));
    b.rewards = random_matrix(rows, 1, rng).col(0);
    b.next_states = random_matrix(rows, sd, rng);
    b.done = Vector::Zero(rows);
    b.weights.resize(rows);
    for (Index i = 0; i < rows; ++i) b.weights(i) = w(rng);
    return b;
}

/// Weighted quantile-Huber critic loss, both online critics.
inline std::vector<Report> check_critic_loss(agent::QuantileCritic& critic, const agent::AgentConfig& cfg, Rng& rng,
                                             Index rows = 4, const Options& opt = {})
{
    const auto b = random_batch(cfg.state_dim, cfg.action_dim, rows, rng);
    // Targets spread wide enough to exercise both Huber branches.
    const Matrix y = random_matrix(rows, critic.quantiles(), rng, 2);
    const auto cl = agent::weighted_critic_loss(critic, b, y, cfg.kappa);
    std::vector<Report> out;
    for (int k = 0; k < 2; ++k)
        out.push_back(compare("critic." + std::to_string(k), critic.online(k).parameters(), cl.grads[k],
                              [&] { return agent::weighted_critic_loss(critic, b, y, cfg.kappa).loss; }, opt));
    return out;
}

/// Actor objective through the squashed reparameterized sample and the critics.
inline Report check_actor_loss(agent::GaussianPolicy& policy, const agent::QuantileCritic& critic, Real alpha,
                               const agent::AgentConfig& cfg, Rng& rng, Index rows = 4, bool weighted = false,
                               const Options& opt = {})
{
    const Matrix S = random_matrix(rows, cfg.state_dim, rng);
    const Matrix noise = random_matrix(rows, cfg.action_dim, rng);
    Vector w = Vector::Ones(rows);
    if (weighted) w = (random_matrix(rows, 1, rng).col(0).array().abs() * Real(0.5) + Real(0.1)).min(1).matrix();
    const Vector* wp = weighted ? &w : nullptr;
    const auto al = agent::actor_loss(policy, critic, alpha, S, noise, wp);
    return compare("policy", policy.net().parameters(), al.grads,
                   [&] { return agent::actor_loss(policy, critic, alpha, S, noise, wp).loss; }, opt);
}

struct SuiteResult {
    std::vector<Report> reports;
    int instances = 0;

    bool ok() const
    {
        return std::all_of(reports.begin(), reports.end(), [](const Report& r) { return r.ok(); });
    }
    Real max_rel_error() const
    {
        Real m = 0;
        for (const auto& r : reports) m = std::max(m, r.max_rel_error);
        return m;
    }
};

/// `instances` random small problems, each checking every network and loss.
inline SuiteResult run_suite(int instances, std::uint64_t seed, const Options& opt = {})
{
    SuiteResult res;
    SeedSequence seq(seed);
    for (int i = 0; i < instances; ++i) {
        Rng rng = seq.stream("gradcheck", static_cast<std::uint64_t>(i));
        std::uniform_int_distribution<int> dim(1, 3), width(3, 6), blocks(1, 2);

        wm::WorldModelConfig wc;
        wc.state_dim = dim(rng);
        wc.action_dim = dim(rng);
        wc.latent_dim = wc.state_dim + 2;
        wc.width = width(rng);
        wc.blocks = blocks(rng);
        wc.kind = wm::ModelKind::imle;
        wm::WorldModel imle(wc, rng);
        res.reports.push_back(check_network(imle.net(), rng, 3, opt));
        res.reports.push_back(check_input_gradient(imle.net(), rng, 3, opt));
        res.reports.push_back(check_imle_loss(imle, rng, 4, opt));
        wc.kind = wm::ModelKind::gaussian;
        wm::WorldModel gauss(wc, rng);
        res.reports.push_back(check_gaussian_nll(gauss, rng, 4, opt));

        agent::AgentConfig ac;
        ac.state_dim = dim(rng);
        ac.action_dim = dim(rng);
        ac.action_low = Vector::Constant(ac.action_dim, -2);
        ac.action_high = Vector::Constant(ac.action_dim, 2);
        ac.hidden = width(rng);
        ac.depth = blocks(rng);
        ac.quantiles = 5;
        agent::QuantileCritic critic(ac, rng);
        for (auto& r : check_critic_loss(critic, ac, rng, 4, opt)) res.reports.push_back(std::move(r));
        agent::GaussianPolicy policy(ac, rng);
        res.reports.push_back(check_actor_loss(policy, critic, Real(0.3), ac, rng, 4, i % 2 == 1, opt));
        ++res.instances;
    }
    return res;
}

}  // namespace wimle::gradcheck
