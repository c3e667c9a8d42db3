#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "wimle/agent.hpp"
#include "wimle/errors.hpp"
#include "wimle/transition.hpp"
#include "wimle/worldmodel.hpp"

namespace wimle::buffers {

struct RolloutSettings {
    int horizon = 1;
    int count = 200;
    int candidates = 4;
    /// Diagnostic: treat every prediction as sigma = 0 (w = 1).
    bool force_zero_sigma = false;
};

/// Synthetic transitions ordered depth-major (all depth-0 transitions first),
/// with per-depth statistics.
struct Rollouts {
    std::vector<WeightedTransition> transitions;
    std::vector<int> depth;
    std::vector<Real> sigma;           // per transition, as used for its weight
    std::vector<Real> mean_weight;     // per depth
    std::vector<Real> mean_sigma;      // per depth
    std::vector<Real> mean_epistemic;  // per depth
    std::vector<Real> mean_aleatoric;  // per depth
};

/// Branches `count` rollouts of length `horizon` from start states drawn
/// uniformly with replacement from the environment store. Each step samples
/// a ~ pi, predicts with all members and m latents, and records the weighted
/// transition. Synthetic transitions never terminate.
inline Rollouts generate_rollouts(const wm::Ensemble& ens, const agent::GaussianPolicy& policy,
                                  const ReplayStore& env_store, const RolloutSettings& rs, Rng& rng)
{
    if (env_store.empty()) throw ContractError("generate_rollouts: environment store is empty");
    detail::require(rs.horizon >= 1, "generate_rollouts: horizon must be at least 1");
    detail::require(rs.count >= 0, "generate_rollouts: rollout count must be non-negative");

    Rollouts out;
    out.transitions.reserve(static_cast<std::size_t>(rs.horizon * rs.count));
    if (rs.count == 0) return out;

    const auto start = env_store.sample_indices(static_cast<std::size_t>(rs.count), rng);
    Matrix S(rs.count, env_store[start[0]].s.size());
    for (int i = 0; i < rs.count; ++i) S.row(i) = env_store[start[static_cast<std::size_t>(i)]].s.transpose();

    for (int t = 0; t < rs.horizon; ++t) {
        const Matrix A = policy.act(S, false, rng);
        const auto preds = wm::predict_batch(ens, S, A, rs.candidates, rng);
        Matrix next(S.rows(), S.cols());
        Real w_sum = 0, s_sum = 0, e_sum = 0, a_sum = 0;
        for (int i = 0; i < rs.count; ++i) {
            const auto& p = preds[static_cast<std::size_t>(i)];
            WeightedTransition tr;
            tr.s = S.row(i).transpose();
            tr.a = A.row(i).transpose();
            tr.r = p.reward;
            tr.s_next = p.next_state;
            tr.done = false;
            tr.w = rs.force_zero_sigma ? Real(1) : p.weight;
            next.row(i) = p.next_state.transpose();
            w_sum += tr.w;
            s_sum += rs.force_zero_sigma ? Real(0) : p.uncertainty.sigma;
            e_sum += p.uncertainty.epistemic;
            a_sum += p.uncertainty.aleatoric;
            out.transitions.push_back(std::move(tr));
            out.depth.push_back(t);
            out.sigma.push_back(rs.force_zero_sigma ? Real(0) : p.uncertainty.sigma);
        }
        const auto n = static_cast<Real>(rs.count);
        out.mean_weight.push_back(w_sum / n);
        out.mean_sigma.push_back(s_sum / n);
        out.mean_epistemic.push_back(e_sum / n);
        out.mean_aleatoric.push_back(a_sum / n);
        S = std::move(next);
    }
    return out;
}

/// Empties the model store, then fills it with `fresh`.
inline void refresh_model_store(ReplayStore& model_store, const std::vector<WeightedTransition>& fresh)
{
    model_store.clear();
    for (const auto& t : fresh) model_store.add(t);
}

/// ceil(rho * n) real transitions (w forced to 1) followed by synthetic ones,
/// each drawn uniformly with replacement from its store. With an empty model
/// store the whole batch is real.
inline Batch sample_mixed_batch(const ReplayStore& env_store, const ReplayStore& model_store, std::size_t n,
                                Real real_fraction, Rng& rng)
{
    if (env_store.empty()) throw ContractError("sample_mixed_batch: environment store is empty");
    detail::require(real_fraction >= 0 && real_fraction <= 1, "sample_mixed_batch: real fraction must lie in [0, 1]");
    std::size_t n_real = static_cast<std::size_t>(std::ceil(real_fraction * static_cast<Real>(n) - Real(1e-9)));
    n_real = std::min(n_real, n);
    if (model_store.empty()) n_real = n;

    std::vector<const WeightedTransition*> items;
    items.reserve(n);
    for (auto i : env_store.sample_indices(n_real, rng)) items.push_back(&env_store[i]);
    if (n_real < n)
        for (auto i : model_store.sample_indices(n - n_real, rng)) items.push_back(&model_store[i]);
    Batch b = stack(items);
    for (std::size_t i = 0; i < n_real; ++i) b.weights(static_cast<Index>(i)) = 1;
    return b;
}

// ---------------------------------------------------------------------------
// Transition log: one transition per line, "s | a | r | s' | done | w",
// vector components separated by single spaces.
// ---------------------------------------------------------------------------

namespace logfmt {
inline void write_vec(std::ostream& os, const Vector& v)
{
    for (Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << v(i);
}

inline Vector read_vec(const std::string& field)
{
    std::istringstream is(field);
    std::vector<Real> vals;
    Real x;
    while (is >> x) vals.push_back(x);
    return Eigen::Map<Vector>(vals.data(), static_cast<Index>(vals.size()));
}

inline std::vector<std::string> split_fields(const std::string& line)
{
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
        const auto bar = line.find('|', pos);
        f.push_back(line.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos));
        if (bar == std::string::npos) break;
        pos = bar + 1;
    }
    return f;
}
}  // namespace logfmt

inline void write_transition_log(std::ostream& os, const std::vector<WeightedTransition>& items)
{
    const auto old = os.precision(std::numeric_limits<Real>::max_digits10);
    for (const auto& t : items) {
        logfmt::write_vec(os, t.s);
        os << " | ";
        logfmt::write_vec(os, t.a);
        os << " | " << t.r << " | ";
        logfmt::write_vec(os, t.s_next);
        os << " | " << (t.done ? 1 : 0) << " | " << t.w << '\n';
    }
    os.precision(old);
}

inline void write_transition_log(std::ostream& os, const ReplayStore& store)
{
    std::vector<WeightedTransition> items;
    items.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) items.push_back(store[i]);
    write_transition_log(os, items);
}

inline std::vector<WeightedTransition> read_transition_log(std::istream& is)
{
    std::vector<WeightedTransition> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = logfmt::split_fields(line);
        if (f.size() != 6) throw ContractError("transition log: expected 6 '|'-separated fields");
        WeightedTransition t;
        t.s = logfmt::read_vec(f[0]);
        t.a = logfmt::read_vec(f[1]);
        t.r = std::stod(f[2]);
        t.s_next = logfmt::read_vec(f[3]);
        t.done = std::stoi(f[4]) != 0;
        t.w = std::stod(f[5]);
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace wimle::buffers
