#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wimle/agent.hpp"
#include "wimle/buffers.hpp"
#include "wimle/checkpoint.hpp"
#include "wimle/envs.hpp"
#include "wimle/harness/config.hpp"
#include "wimle/harness/metrics.hpp"
#include "wimle/harness/report.hpp"
#include "wimle/worldmodel.hpp"

namespace wimle::harness {

inline agent::AgentConfig agent_config(const ExperimentConfig& c, const envs::EnvSpec& spec)
{
    agent::AgentConfig a;
    a.state_dim = spec.state_dim;
    a.action_dim = spec.action_dim;
    a.action_low = spec.action_low;
    a.action_high = spec.action_high;
    a.hidden = c.agent_hidden;
    a.depth = c.agent_depth;
    a.quantiles = c.quantiles;
    a.actor_lr = static_cast<Real>(c.actor_lr);
    a.critic_lr = static_cast<Real>(c.critic_lr);
    a.alpha_lr = static_cast<Real>(c.alpha_lr);
    a.gamma = static_cast<Real>(c.gamma);
    a.polyak = static_cast<Real>(c.polyak);
    a.initial_alpha = static_cast<Real>(c.initial_alpha);
    a.weight_actor = c.weight_actor;
    return a;
}

/// Final state of one seed's run.
struct SeedRun {
    std::uint64_t seed = 0;
    agent::SacAgent agent;
    std::optional<wm::Ensemble> ensemble;
    buffers::ReplayStore env_store{1};
    buffers::ReplayStore model_store{1};
};

struct ExperimentResult {
    MetricBundle metrics;
    std::vector<SeedRun> runs;
};

/// Called after every evaluation with (seed, env step, eval return).
using ProgressFn = std::function<void(std::uint64_t, long, double)>;

/// Mean undiscounted return of `episodes` deterministic episodes.
inline double evaluate(const agent::GaussianPolicy& policy, envs::Environment& env, int episodes,
                       const SeedSequence& seq, std::uint64_t eval_index)
{
    Rng unused(0);
    double total = 0;
    for (int e = 0; e < episodes; ++e) {
        Vector s = env.reset(seq.derive("eval.episode", eval_index * static_cast<std::uint64_t>(episodes) +
                                                            static_cast<std::uint64_t>(e)));
        while (true) {
            const auto r = env.step(agent::select_action(policy, s, true, unused));
            total += r.reward;
            s = r.next_state;
            if (r.terminal || r.truncated) break;
        }
    }
    return total / episodes;
}

/// One seed of the training loop: uniform warm-up, then per env step one
/// transition, a model refresh every train_freq steps, and updates_per_step
/// agent updates on mixed real/synthetic batches.
inline SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, MetricBundle& metrics,
                        const ProgressFn& progress = {})
{
    cfg.validate();
    const SeedSequence seq(seed);
    auto env = envs::make_env(cfg.env);
    auto eval_env = envs::make_env(cfg.env);
    const auto& spec = env->spec();

    Rng explore = seq.stream("explore");
    Rng policy_rng = seq.stream("policy");
    Rng batch_rng = seq.stream("batch");
    Rng rollout_rng = seq.stream("rollout");

    SeedRun run;
    run.seed = seed;
    run.agent = agent::SacAgent(agent_config(cfg, spec), seq.derive("agent"));
    const bool use_model = !cfg.model_free();
    const int horizon = cfg.effective_horizon();
    if (use_model)
        run.ensemble = wm::make_ensemble(world_model_config(cfg, spec.state_dim, spec.action_dim), cfg.ensemble_size,
                                         seq.derive("world-model"));
    run.env_store = buffers::ReplayStore(cfg.env_capacity);
    run.model_store = buffers::ReplayStore(static_cast<std::size_t>(cfg.rollouts) * static_cast<std::size_t>(horizon));

    wm::TrainSettings ts;
    ts.updates = cfg.model_updates;
    ts.candidates = cfg.latent_candidates;
    ts.batch_size = cfg.model_batch;
    buffers::RolloutSettings rs;
    rs.horizon = horizon;
    rs.count = cfg.rollouts;
    rs.candidates = cfg.latent_candidates;
    rs.force_zero_sigma = cfg.force_zero_sigma;

    std::uint64_t episode = 0, eval_index = 0;
    Vector s = env->reset(seq.derive("env.episode", episode++));
    std::vector<std::uniform_real_distribution<Real>> uniform;
    for (int d = 0; d < spec.action_dim; ++d) uniform.emplace_back(spec.action_low(d), spec.action_high(d));

    for (long step = 1; step <= cfg.total_steps; ++step) {
        Vector a(spec.action_dim);
        if (step <= cfg.warmup_steps) {
            for (int d = 0; d < spec.action_dim; ++d) a(d) = uniform[static_cast<std::size_t>(d)](explore);
        } else {
            a = agent::select_action(run.agent.policy(), s, false, policy_rng);
        }
        const auto res = env->step(a);
        run.env_store.add({s, a, res.reward, res.next_state, res.terminal, 1});
        s = res.next_state;
        if (res.terminal || res.truncated) s = env->reset(seq.derive("env.episode", episode++));

        const bool training = step > cfg.warmup_steps;
        if (use_model && training && (step - cfg.warmup_steps - 1) % cfg.train_freq == 0) {
            auto& ens = *run.ensemble;
            const auto traces = wm::train_ensemble(ens, run.env_store, ts);
            double loss = 0;
            for (const auto& t : traces) loss += t.back();
            loss /= static_cast<double>(traces.size());
            if (!std::isfinite(loss)) throw NumericError("run: non-finite world-model loss at step " + std::to_string(step));
            auto roll = buffers::generate_rollouts(ens, run.agent.policy(), run.env_store, rs, rollout_rng);
            if (!cfg.weighting)
                for (auto& t : roll.transitions) t.w = 1;
            buffers::refresh_model_store(run.model_store, roll.transitions);

            metrics.add("model_loss", seed, step, loss);
            double w_all = 0, s_all = 0, e_all = 0, a_all = 0;
            for (int t = 0; t < horizon; ++t) {
                const auto ut = static_cast<std::size_t>(t);
                metrics.add("weight_depth_" + std::to_string(t + 1), seed, step, roll.mean_weight[ut]);
                w_all += roll.mean_weight[ut];
                s_all += roll.mean_sigma[ut];
                e_all += roll.mean_epistemic[ut];
                a_all += roll.mean_aleatoric[ut];
            }
            metrics.add("synthetic_weight_mean", seed, step, w_all / horizon);
            metrics.add("sigma_mean", seed, step, s_all / horizon);
            metrics.add("sigma_epistemic", seed, step, e_all / horizon);
            metrics.add("sigma_aleatoric", seed, step, a_all / horizon);
        }

        if (training) {
            agent::UpdateStats st;
            for (int u = 0; u < cfg.updates_per_step; ++u) {
                const auto batch = buffers::sample_mixed_batch(run.env_store, run.model_store,
                                                               static_cast<std::size_t>(cfg.agent_batch),
                                                               static_cast<Real>(cfg.real_fraction), batch_rng);
                st = run.agent.update(batch, policy_rng);
            }
            if (step % cfg.eval_interval == 0) {
                metrics.add("critic_loss", seed, step, st.critic_loss);
                metrics.add("alpha", seed, step, st.alpha);
            }
        }

        if (step % cfg.eval_interval == 0) {
            const double ret = evaluate(run.agent.policy(), *eval_env, cfg.eval_episodes, seq, eval_index++);
            if (!std::isfinite(ret)) throw NumericError("run: non-finite evaluation return at step " + std::to_string(step));
            metrics.add("eval_return", seed, step, ret);
            if (progress) progress(seed, step, ret);
        }
    }
    return run;
}

/// Runs seeds cfg.seed, cfg.seed + 1, ..., cfg.seed + num_seeds - 1.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {})
{
    cfg.validate();
    ExperimentResult r;
    for (int i = 0; i < cfg.num_seeds; ++i)
        r.runs.push_back(run_seed(cfg, cfg.seed + static_cast<std::uint64_t>(i), r.metrics, progress));
    return r;
}

inline Checkpoint make_checkpoint(const SeedRun& run)
{
    Checkpoint c;
    c.networks.emplace_back("policy", run.agent.policy().net());
    for (int k = 0; k < 2; ++k) {
        c.networks.emplace_back("critic" + std::to_string(k), run.agent.critic().online(k));
        c.networks.emplace_back("critic" + std::to_string(k) + ".target", run.agent.critic().target(k));
    }
    if (run.ensemble)
        for (int k = 0; k < run.ensemble->size(); ++k)
            c.networks.emplace_back("world-model" + std::to_string(k), run.ensemble->member(k).net());
    c.scalars["log_alpha"] = run.agent.temperature().log_alpha;
    c.scalars["seed"] = static_cast<Real>(run.seed);
    return c;
}

/// Report, manifest, one checkpoint per seed and, when enabled, the final
/// environment and model stores as transition logs.
inline void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& res, const std::filesystem::path& dir)
{
    Manifest m;
    m.config_text = to_text(cfg);
    for (const auto& r : res.runs) m.seeds.push_back(r.seed);
    emit_report(res.metrics, dir, m);
    for (const auto& r : res.runs) {
        const auto p = dir / ("checkpoint_seed" + std::to_string(r.seed) + ".txt");
        std::ofstream f(p);
        if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
        save_checkpoint(f, make_checkpoint(r));
        if (cfg.transition_log) {
            std::ofstream e(dir / ("env_store_seed" + std::to_string(r.seed) + ".log"));
            buffers::write_transition_log(e, r.env_store);
            std::ofstream s(dir / ("model_store_seed" + std::to_string(r.seed) + ".log"));
            buffers::write_transition_log(s, r.model_store);
        }
    }
}

}  // namespace wimle::harness
