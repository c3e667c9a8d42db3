#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/worldmodel.hpp"

namespace wimle::harness {

struct ExperimentConfig {
    std::string env = "pendulum";
    long total_steps = 100000;
    std::uint64_t seed = 0;
    int num_seeds = 1;

    int horizon = 0;  // 0: environment default
    int max_horizon = 8;
    int ensemble_size = 7;
    int rollouts = 200;
    int latent_candidates = 4;
    int latent_dim = 16;
    int model_width = 512;
    int model_blocks = 3;
    double model_lr = 1e-3;
    int model_batch = 512;
    int model_updates = 100;
    long train_freq = 1000;
    wm::ModelKind model = wm::ModelKind::imle;
    bool normalize_targets = false;

    int agent_hidden = 256;
    int agent_depth = 2;
    double actor_lr = 3e-4;
    double critic_lr = 3e-4;
    double alpha_lr = 3e-4;
    int agent_batch = 128;
    int quantiles = 100;
    int updates_per_step = 10;
    double gamma = 0.99;
    double polyak = 0.005;
    double initial_alpha = 1.0;

    double real_fraction = 0.5;
    long warmup_steps = 1000;
    long eval_interval = 1000;
    int eval_episodes = 5;
    bool weighting = true;
    bool weight_actor = false;
    bool force_zero_sigma = false;
    std::size_t env_capacity = 1000000;
    bool transition_log = false;

    bool model_free() const noexcept { return real_fraction >= 1.0; }

    int effective_horizon() const
    {
        if (horizon > 0) return horizon;
        return env == "bimodal-fork" ? 1 : 4;
    }

    void validate() const;
};

namespace cfgdetail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v)
{
    T out{};
    const char* first = v.data();
    const char* last = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last)
        throw ContractError("config: key '" + key + "' expects a number, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ContractError("config: key '" + key + "' expects on|off, got '" + v + "'");
}

template <class T>
std::string format_number(T v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace cfgdetail

/// One settable configuration key.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
ConfigKey make_key(std::string name, std::string help, T ExperimentConfig::*field)
{
    ConfigKey k;
    k.name = name;
    k.help = std::move(help);
    k.set = [field, name](ExperimentConfig& c, const std::string& v) {
        if constexpr (std::is_same_v<T, bool>) {
            c.*field = cfgdetail::parse_bool(name, v);
        } else if constexpr (std::is_same_v<T, std::string>) {
            c.*field = v;
        } else if constexpr (std::is_same_v<T, wm::ModelKind>) {
            c.*field = wm::parse_model_kind(v);
        } else {
            c.*field = cfgdetail::parse_number<T>(name, v);
        }
    };
    k.get = [field](const ExperimentConfig& c) -> std::string {
        if constexpr (std::is_same_v<T, bool>) {
            return c.*field ? "on" : "off";
        } else if constexpr (std::is_same_v<T, std::string>) {
            return c.*field;
        } else if constexpr (std::is_same_v<T, wm::ModelKind>) {
            return wm::to_string(c.*field);
        } else {
            return cfgdetail::format_number(c.*field);
        }
    };
    return k;
}

inline const std::vector<ConfigKey>& config_keys()
{
    using C = ExperimentConfig;
    static const std::vector<ConfigKey> keys = {
        make_key("env", "environment name", &C::env),
        make_key("total_steps", "environment steps per seed", &C::total_steps),
        make_key("seed", "base seed", &C::seed),
        make_key("num_seeds", "seeds run as seed, seed+1, ...", &C::num_seeds),
        make_key("horizon", "rollout horizon H (0: env default)", &C::horizon),
        make_key("max_horizon", "upper bound accepted for H", &C::max_horizon),
        make_key("ensemble_size", "world-model members K", &C::ensemble_size),
        make_key("rollouts", "synthetic rollouts B per refresh", &C::rollouts),
        make_key("latent_candidates", "latent samples m", &C::latent_candidates),
        make_key("latent_dim", "latent dimension", &C::latent_dim),
        make_key("model_width", "world-model hidden width", &C::model_width),
        make_key("model_blocks", "world-model residual blocks", &C::model_blocks),
        make_key("model_lr", "world-model learning rate", &C::model_lr),
        make_key("model_batch", "world-model minibatch", &C::model_batch),
        make_key("model_updates", "world-model updates per refresh", &C::model_updates),
        make_key("train_freq", "env steps between model refreshes", &C::train_freq),
        make_key("model", "world-model variant imle|gaussian", &C::model),
        make_key("normalize_targets", "standardize model targets", &C::normalize_targets),
        make_key("agent_hidden", "actor/critic hidden width", &C::agent_hidden),
        make_key("agent_depth", "actor/critic hidden layers", &C::agent_depth),
        make_key("actor_lr", "actor learning rate", &C::actor_lr),
        make_key("critic_lr", "critic learning rate", &C::critic_lr),
        make_key("alpha_lr", "temperature learning rate", &C::alpha_lr),
        make_key("agent_batch", "agent minibatch", &C::agent_batch),
        make_key("quantiles", "critic quantiles N", &C::quantiles),
        make_key("updates_per_step", "agent updates per env step", &C::updates_per_step),
        make_key("gamma", "discount", &C::gamma),
        make_key("polyak", "target tracking rate", &C::polyak),
        make_key("initial_alpha", "initial temperature", &C::initial_alpha),
        make_key("real_fraction", "fraction of real data per batch (1: model-free)", &C::real_fraction),
        make_key("warmup_steps", "uniform-random steps before training", &C::warmup_steps),
        make_key("eval_interval", "env steps between evaluations", &C::eval_interval),
        make_key("eval_episodes", "deterministic episodes per evaluation", &C::eval_episodes),
        make_key("weighting", "confidence weighting on|off", &C::weighting),
        make_key("weight_actor", "also weight the actor loss", &C::weight_actor),
        make_key("force_zero_sigma", "treat every prediction as certain", &C::force_zero_sigma),
        make_key("env_capacity", "environment store capacity", &C::env_capacity),
        make_key("transition_log", "write the final stores as text", &C::transition_log),
    };
    return keys;
}

inline const ConfigKey* find_key(const std::string& name)
{
    for (const auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

inline void set_value(ExperimentConfig& c, const std::string& key, const std::string& value)
{
    const auto* k = find_key(key);
    if (!k) throw ContractError("config: unknown key '" + key + "'");
    k->set(c, value);
}

inline void ExperimentConfig::validate() const
{
    auto pos = [](bool ok, const char* what) {
        if (!ok) throw ContractError(std::string("config: ") + what);
    };
    pos(env == "pendulum" || env == "bimodal-fork", "env must be pendulum or bimodal-fork");
    pos(total_steps >= 1, "total_steps must be positive");
    pos(num_seeds >= 1, "num_seeds must be positive");
    pos(horizon >= 0, "horizon must be non-negative");
    pos(max_horizon >= 1, "max_horizon must be positive");
    pos(effective_horizon() <= max_horizon, "horizon exceeds max_horizon");
    pos(ensemble_size >= 2, "ensemble_size must be at least 2");
    pos(rollouts >= 1, "rollouts must be positive");
    pos(latent_candidates >= 2, "latent_candidates must be at least 2");
    pos(latent_dim >= 1, "latent_dim must be positive");
    pos(model_width >= 1 && model_blocks >= 0, "world-model shape");
    pos(model_lr > 0 && actor_lr > 0 && critic_lr > 0 && alpha_lr > 0, "learning rates must be positive");
    pos(model_batch >= 1 && model_updates >= 1, "model_batch and model_updates must be positive");
    pos(train_freq >= 1, "train_freq must be positive");
    pos(agent_hidden >= 1 && agent_depth >= 1, "agent network shape");
    pos(agent_batch >= 1 && quantiles >= 1 && updates_per_step >= 1, "agent batch, quantiles, updates");
    pos(gamma > 0 && gamma < 1, "gamma must lie in (0, 1)");
    pos(polyak > 0 && polyak <= 1, "polyak must lie in (0, 1]");
    pos(initial_alpha > 0, "initial_alpha must be positive");
    pos(real_fraction >= 0 && real_fraction <= 1, "real_fraction must lie in [0, 1]");
    pos(warmup_steps >= 0 && warmup_steps <= total_steps, "warmup_steps must lie in [0, total_steps]");
    pos(eval_interval >= 1 && eval_episodes >= 1, "evaluation schedule");
    pos(env_capacity >= 1, "env_capacity must be positive");
}

/// Flat "key = value" text with '#' comments.
inline void apply_config_text(ExperimentConfig& c, std::istream& is)
{
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = cfgdetail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
        set_value(c, cfgdetail::trim(line.substr(0, eq)), cfgdetail::trim(line.substr(eq + 1)));
    }
}

inline ExperimentConfig parse_config(const std::string& text)
{
    ExperimentConfig c;
    std::istringstream is(text);
    apply_config_text(c, is);
    return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
    ExperimentConfig c;
    apply_config_text(c, f);
    return c;
}

inline std::string to_text(const ExperimentConfig& c)
{
    std::ostringstream os;
    for (const auto& k : config_keys()) os << k.name << " = " << k.get(c) << '\n';
    return os.str();
}

inline wm::WorldModelConfig world_model_config(const ExperimentConfig& c, int state_dim, int action_dim)
{
    wm::WorldModelConfig m;
    m.state_dim = state_dim;
    m.action_dim = action_dim;
    m.latent_dim = c.latent_dim;
    m.width = c.model_width;
    m.blocks = c.model_blocks;
    m.kind = c.model;
    m.adam.lr = static_cast<Real>(c.model_lr);
    m.normalize_targets = c.normalize_targets;
    return m;
}

}  // namespace wimle::harness
