#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/random.hpp"

namespace wimle::harness {

/// (env step, value) pairs for one metric of one seed.
struct MetricSeries {
    std::vector<long> steps;
    std::vector<double> values;

    void add(long step, double value)
    {
        if (!steps.empty() && step <= steps.back())
            throw ContractError("MetricSeries: steps must be strictly increasing");
        steps.push_back(step);
        values.push_back(value);
    }

    std::size_t size() const noexcept { return steps.size(); }
    bool empty() const noexcept { return steps.empty(); }
    bool operator==(const MetricSeries&) const = default;
};

/// metric name -> seed -> series.
struct MetricBundle {
    std::map<std::string, std::map<std::uint64_t, MetricSeries>> series;

    void add(const std::string& metric, std::uint64_t seed, long step, double value)
    {
        series[metric][seed].add(step, value);
    }

    bool empty() const noexcept { return series.empty(); }

    std::vector<std::uint64_t> seeds() const
    {
        std::vector<std::uint64_t> s;
        for (const auto& [name, per_seed] : series)
            for (const auto& [seed, ms] : per_seed) s.push_back(seed);
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }

    void merge(const MetricBundle& other)
    {
        for (const auto& [name, per_seed] : other.series)
            for (const auto& [seed, ms] : per_seed) series[name][seed] = ms;
    }

    bool operator==(const MetricBundle&) const = default;
};

/// Interquartile mean: the mean over the middle half of the sorted sample,
/// with the boundary samples weighted by the fraction of them that falls
/// inside [n/4, 3n/4].
inline double iqm(std::span<const double> values)
{
    if (values.empty()) throw ContractError("iqm: empty input");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    const double lo = n / 4, hi = 3 * n / 4;
    double sum = 0, mass = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double a = std::max(lo, static_cast<double>(i));
        const double b = std::min(hi, static_cast<double>(i + 1));
        if (b > a) {
            sum += (b - a) * v[i];
            mass += b - a;
        }
    }
    return sum / mass;
}

inline double iqm(const std::vector<double>& values) { return iqm(std::span<const double>(values)); }

struct Interval {
    double low = 0;
    double high = 0;
};

namespace metricsdetail {

/// Linear-interpolated empirical quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double q)
{
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    if (i + 1 >= s.size()) return s.back();
    return s[i] + f * (s[i + 1] - s[i]);
}

inline Interval percentile_interval(std::vector<double> stats, double confidence)
{
    std::sort(stats.begin(), stats.end());
    const double a = (1 - confidence) / 2;
    return {quantile_sorted(stats, a), quantile_sorted(stats, 1 - a)};
}

}  // namespace metricsdetail

struct BootstrapOptions {
    double confidence = 0.95;
    int resamples = 2000;
    std::uint64_t seed = 0;
};

/// Percentile bootstrap of the IQM over seeds for one step: `per_seed` holds
/// one value per seed.
inline Interval bootstrap_iqm_interval(std::span<const double> per_seed, const BootstrapOptions& opt, Rng& rng)
{
    if (per_seed.size() < 2) throw ContractError("bootstrap_ci: need at least 2 seeds");
    detail::require(opt.confidence > 0 && opt.confidence < 1 && opt.resamples >= 1, "bootstrap_ci: options");
    std::uniform_int_distribution<std::size_t> pick(0, per_seed.size() - 1);
    std::vector<double> stats(static_cast<std::size_t>(opt.resamples));
    std::vector<double> draw(per_seed.size());
    for (auto& s : stats) {
        for (auto& d : draw) d = per_seed[pick(rng)];
        s = iqm(draw);
    }
    return metricsdetail::percentile_interval(std::move(stats), opt.confidence);
}

/// Per-step intervals for series[seed][step]. Seeds are resampled jointly
/// across steps; every series must have the same length.
inline std::vector<Interval> bootstrap_ci(const std::vector<std::vector<double>>& per_seed,
                                          const BootstrapOptions& opt = {})
{
    if (per_seed.size() < 2) throw ContractError("bootstrap_ci: need at least 2 seeds");
    const std::size_t steps = per_seed.front().size();
    for (const auto& s : per_seed)
        detail::require_dims(s.size() == steps, "bootstrap_ci: series lengths differ across seeds");
    Rng rng = SeedSequence(opt.seed).stream("bootstrap");
    std::uniform_int_distribution<std::size_t> pick(0, per_seed.size() - 1);
    std::vector<std::vector<double>> stats(steps, std::vector<double>(static_cast<std::size_t>(opt.resamples)));
    std::vector<std::size_t> idx(per_seed.size());
    std::vector<double> draw(per_seed.size());
    for (int r = 0; r < opt.resamples; ++r) {
        for (auto& i : idx) i = pick(rng);
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t k = 0; k < idx.size(); ++k) draw[k] = per_seed[idx[k]][t];
            stats[t][static_cast<std::size_t>(r)] = iqm(draw);
        }
    }
    std::vector<Interval> out;
    out.reserve(steps);
    for (auto& s : stats) out.push_back(metricsdetail::percentile_interval(std::move(s), opt.confidence));
    return out;
}

/// Interval for IQM(a) - IQM(b), resampling seeds within each group.
inline Interval bootstrap_gap_ci(const std::vector<double>& a, const std::vector<double>& b,
                                 const BootstrapOptions& opt = {})
{
    if (a.size() < 2 || b.size() < 2) throw ContractError("bootstrap_ci: need at least 2 seeds per group");
    Rng rng = SeedSequence(opt.seed).stream("bootstrap.gap");
    std::uniform_int_distribution<std::size_t> pa(0, a.size() - 1), pb(0, b.size() - 1);
    std::vector<double> stats(static_cast<std::size_t>(opt.resamples));
    std::vector<double> da(a.size()), db(b.size());
    for (auto& s : stats) {
        for (auto& x : da) x = a[pa(rng)];
        for (auto& x : db) x = b[pb(rng)];
        s = iqm(da) - iqm(db);
    }
    return metricsdetail::percentile_interval(std::move(stats), opt.confidence);
}

/// Mean of the last `window` values of a series.
inline double final_window_mean(const MetricSeries& s, std::size_t window)
{
    detail::require(!s.empty() && window >= 1, "final_window_mean: empty series");
    const std::size_t n = std::min(window, s.size());
    double sum = 0;
    for (std::size_t i = s.size() - n; i < s.size(); ++i) sum += s.values[i];
    return sum / static_cast<double>(n);
}

}  // namespace wimle::harness
