#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/harness/metrics.hpp"

#ifndef WIMLE_VERSION
#define WIMLE_VERSION "0.1.0"
#endif

namespace wimle::harness {

inline std::string version_string() { return WIMLE_VERSION; }

struct Manifest {
    std::string config_text;  // "key = value" lines
    std::vector<std::uint64_t> seeds;
    std::string version = version_string();
};

namespace reportdetail {

inline std::string fmt(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline double parse_double(const std::string& s)
{
    double v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ContractError("report: bad number '" + s + "'");
    return v;
}

template <class Int>
Int parse_int(const std::string& s)
{
    Int v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ContractError("report: bad integer '" + s + "'");
    return v;
}

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::ofstream open_out(const std::filesystem::path& p)
{
    std::ofstream f(p);
    if (!f) throw std::runtime_error("report: cannot write '" + p.string() + "'");
    return f;
}

inline void check_written(std::ofstream& f, const std::filesystem::path& p)
{
    f.flush();
    if (!f) throw std::runtime_error("report: write failed for '" + p.string() + "'");
}

/// Stable seed for the per-step bootstrap of one metric.
inline std::uint64_t metric_seed(const std::string& metric) { return wimle::detail::fnv1a(metric); }

}  // namespace reportdetail

/// File name used for a metric's CSV.
inline std::string metric_file_name(const std::string& metric)
{
    std::string s = metric;
    for (auto& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
    return s + ".csv";
}

/// Writes the per-metric CSV text for one metric.
inline std::string metric_csv(const std::string& metric, const std::map<std::uint64_t, MetricSeries>& per_seed,
                              const BootstrapOptions& opt = {})
{
    using reportdetail::fmt;
    std::set<long> steps;
    for (const auto& [seed, s] : per_seed) steps.insert(s.steps.begin(), s.steps.end());

    std::ostringstream os;
    os << "step,iqm,ci_low,ci_high";
    for (const auto& [seed, s] : per_seed) os << ",seed_" << seed;
    os << '\n';

    Rng rng = SeedSequence(opt.seed ^ reportdetail::metric_seed(metric)).stream("report.bootstrap");
    std::map<std::uint64_t, std::size_t> cursor;
    for (long step : steps) {
        std::vector<double> vals;
        std::vector<std::string> cells;
        for (const auto& [seed, s] : per_seed) {
            auto& c = cursor[seed];
            if (c < s.size() && s.steps[c] == step) {
                vals.push_back(s.values[c]);
                cells.push_back(fmt(s.values[c]));
                ++c;
            } else {
                cells.emplace_back();
            }
        }
        os << step << ',' << fmt(iqm(vals)) << ',';
        if (vals.size() >= 2) {
            const auto ci = bootstrap_iqm_interval(vals, opt, rng);
            os << fmt(ci.low) << ',' << fmt(ci.high);
        } else {
            os << ',';
        }
        for (const auto& c : cells) os << ',' << c;
        os << '\n';
    }
    return os.str();
}

inline std::string long_csv(const MetricBundle& bundle)
{
    std::ostringstream os;
    os << "metric,seed,step,value\n";
    for (const auto& [name, per_seed] : bundle.series)
        for (const auto& [seed, s] : per_seed)
            for (std::size_t i = 0; i < s.size(); ++i)
                os << name << ',' << seed << ',' << s.steps[i] << ',' << reportdetail::fmt(s.values[i]) << '\n';
    return os.str();
}

inline std::string manifest_text(const Manifest& m)
{
    std::ostringstream os;
    os << "version = " << m.version << '\n';
    os << "seeds =";
    for (auto s : m.seeds) os << ' ' << s;
    os << '\n';
    os << m.config_text;
    return os.str();
}

/// Writes manifest.txt, one <metric>.csv per metric and metrics_long.csv.
inline std::vector<std::filesystem::path> emit_report(const MetricBundle& bundle, const std::filesystem::path& dir,
                                                      const Manifest& manifest, const BootstrapOptions& opt = {})
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("report: cannot create '" + dir.string() + "': " + ec.message());

    std::vector<std::filesystem::path> written;
    auto put = [&](const std::filesystem::path& p, const std::string& text) {
        auto f = reportdetail::open_out(p);
        f << text;
        reportdetail::check_written(f, p);
        written.push_back(p);
    };
    put(dir / "manifest.txt", manifest_text(manifest));
    if (bundle.empty()) return written;
    for (const auto& [name, per_seed] : bundle.series) put(dir / metric_file_name(name), metric_csv(name, per_seed, opt));
    put(dir / "metrics_long.csv", long_csv(bundle));
    return written;
}

inline MetricBundle parse_long_csv(std::istream& is)
{
    MetricBundle b;
    std::string line;
    if (!std::getline(is, line) || line != "metric,seed,step,value")
        throw ContractError("report: long CSV header missing");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = reportdetail::split_csv(line);
        if (f.size() != 4) throw ContractError("report: long CSV row needs 4 fields");
        b.add(f[0], reportdetail::parse_int<std::uint64_t>(f[1]), reportdetail::parse_int<long>(f[2]),
              reportdetail::parse_double(f[3]));
    }
    return b;
}

/// Per-seed series recovered from a per-metric CSV.
inline std::map<std::uint64_t, MetricSeries> parse_metric_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line)) throw ContractError("report: empty metric CSV");
    const auto header = reportdetail::split_csv(line);
    if (header.size() < 4 || header[0] != "step" || header[1] != "iqm")
        throw ContractError("report: unexpected metric CSV header");
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 4; i < header.size(); ++i) {
        if (header[i].rfind("seed_", 0) != 0) throw ContractError("report: bad seed column '" + header[i] + "'");
        seeds.push_back(reportdetail::parse_int<std::uint64_t>(header[i].substr(5)));
    }
    std::map<std::uint64_t, MetricSeries> out;
    for (auto s : seeds) out[s];
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = reportdetail::split_csv(line);
        if (f.size() != header.size()) throw ContractError("report: metric CSV row width mismatch");
        const long step = reportdetail::parse_int<long>(f[0]);
        for (std::size_t k = 0; k < seeds.size(); ++k)
            if (!f[4 + k].empty()) out[seeds[k]].add(step, reportdetail::parse_double(f[4 + k]));
    }
    return out;
}

inline MetricBundle read_report(const std::filesystem::path& dir)
{
    const auto p = dir / "metrics_long.csv";
    if (!std::filesystem::exists(p)) return {};
    std::ifstream f(p);
    if (!f) throw std::runtime_error("report: cannot read '" + p.string() + "'");
    return parse_long_csv(f);
}

}  // namespace wimle::harness
