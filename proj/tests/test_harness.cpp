#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wimle/harness/experiment.hpp"

using namespace wimle;
using namespace wimle::harness;

namespace fs = std::filesystem;

namespace {

const fs::path kData = WIMLE_TEST_DATA_DIR;

ExperimentConfig smoke()
{
    return load_config((kData.parent_path() / "configs" / "smoke.cfg").string());
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("wimle_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> csv_files(const fs::path& dir)
{
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".csv") out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TEST(Config, DefaultsMatchCommonHyperparameters)
{
    const ExperimentConfig c;
    EXPECT_EQ(c.agent_batch, 128);
    EXPECT_EQ(c.quantiles, 100);
    EXPECT_EQ(c.updates_per_step, 10);
    EXPECT_EQ(c.model_lr, 1e-3);
    EXPECT_EQ(c.actor_lr, 3e-4);
    EXPECT_EQ(c.model_batch, 512);
    EXPECT_EQ(c.model_updates, 100);
    EXPECT_EQ(c.latent_candidates, 4);
    EXPECT_EQ(c.train_freq, 1000);
    EXPECT_EQ(c.rollouts, 200);
    EXPECT_EQ(c.ensemble_size, 7);
    EXPECT_EQ(c.effective_horizon(), 4);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesCommentsAndOverrides)
{
    auto c = parse_config("# comment\nenv = bimodal-fork  # trailing\n\nweighting = off\nmodel = gaussian\nseed=9\n");
    EXPECT_EQ(c.env, "bimodal-fork");
    EXPECT_FALSE(c.weighting);
    EXPECT_EQ(c.model, wm::ModelKind::gaussian);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.effective_horizon(), 1);
    set_value(c, "horizon", "3");
    EXPECT_EQ(c.effective_horizon(), 3);
}

TEST(Config, RejectsBadInput)
{
    EXPECT_THROW(parse_config("no_such_key = 1\n"), ContractError);
    EXPECT_THROW(parse_config("horizon\n"), ContractError);
    EXPECT_THROW(parse_config("horizon = three\n"), ContractError);
    EXPECT_THROW(parse_config("weighting = maybe\n"), ContractError);
    EXPECT_THROW(parse_config("horizon = 9\n").validate(), ContractError);
    EXPECT_NO_THROW(parse_config("horizon = 9\nmax_horizon = 40\n").validate());
    EXPECT_THROW(parse_config("real_fraction = 1.5\n").validate(), ContractError);
    EXPECT_THROW(parse_config("latent_candidates = 1\n").validate(), ContractError);
    EXPECT_THROW(parse_config("env = cartpole\n").validate(), ContractError);
    EXPECT_THROW(load_config("/nonexistent/wimle.cfg"), std::runtime_error);
}

TEST(Config, TextRoundTrip)
{
    auto c = smoke();
    c.weighting = false;
    c.gamma = 0.123456789012345;
    const auto back = parse_config(to_text(c));
    EXPECT_EQ(to_text(back), to_text(c));
    EXPECT_EQ(back.gamma, c.gamma);
}

TEST(Config, ShippedConfigsValidate)
{
    for (const auto& e : fs::directory_iterator(kData.parent_path() / "configs"))
        if (e.path().extension() == ".cfg") EXPECT_NO_THROW(load_config(e.path().string()).validate()) << e.path();
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

TEST(Iqm, Examples)
{
    EXPECT_DOUBLE_EQ(iqm(std::vector<double>{1, 2, 3, 4}), 2.5);
    EXPECT_DOUBLE_EQ(iqm(std::vector<double>{7, 7, 7, 7, 7}), 7);
    EXPECT_DOUBLE_EQ(iqm(std::vector<double>{3}), 3);
    EXPECT_DOUBLE_EQ(iqm(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}), 4.5);
    EXPECT_DOUBLE_EQ(iqm(std::vector<double>{100, 1, 2, 3, 4, 5, 6, 7, -100}), 4);
    EXPECT_THROW(iqm(std::vector<double>{}), ContractError);
}

TEST(Iqm, IgnoresOutliersAndOrder)
{
    std::vector<double> a{5, 1, 9, 3, 7, 2, 8, 4};
    std::vector<double> b = a;
    std::sort(b.begin(), b.end());
    EXPECT_DOUBLE_EQ(iqm(a), iqm(b));
    auto c = a;
    c[2] = 1e9;
    c[1] = -1e9;
    EXPECT_DOUBLE_EQ(iqm(a), iqm(c));
}

TEST(Bootstrap, IdenticalSeedsGiveZeroWidth)
{
    const std::vector<std::vector<double>> runs(5, std::vector<double>{1.5, 2.5});
    for (const auto& ci : bootstrap_ci(runs)) EXPECT_EQ(ci.high - ci.low, 0);
}

TEST(Bootstrap, ContainsPointEstimateAndShrinksWithSeeds)
{
    Rng rng(1);
    std::normal_distribution<double> n(10, 2);
    auto width = [&](int seeds) {
        std::vector<std::vector<double>> runs;
        std::vector<double> flat;
        for (int i = 0; i < seeds; ++i) {
            runs.push_back({n(rng)});
            flat.push_back(runs.back()[0]);
        }
        const auto ci = bootstrap_ci(runs)[0];
        EXPECT_LE(ci.low, iqm(flat));
        EXPECT_GE(ci.high, iqm(flat));
        return ci.high - ci.low;
    };
    double w5 = 0, w50 = 0;
    for (int rep = 0; rep < 10; ++rep) {
        w5 += width(5);
        w50 += width(50);
    }
    EXPECT_LT(w50, w5);
}

TEST(Bootstrap, GapIntervalAndErrors)
{
    const auto ci = bootstrap_gap_ci({10, 11, 12, 13, 14}, {0, 1, 2, 3, 4});
    EXPECT_GT(ci.low, 0);
    EXPECT_LE(ci.low, 10);
    EXPECT_GE(ci.high, 10);
    EXPECT_THROW(bootstrap_ci({{1.0}}), ContractError);
    EXPECT_THROW(bootstrap_gap_ci({1}, {1, 2}), ContractError);
    EXPECT_THROW(bootstrap_ci({{1.0, 2.0}, {1.0}}), DimensionError);
}

TEST(Metrics, SeriesStepsStrictlyIncrease)
{
    MetricSeries s;
    s.add(1, 0.5);
    s.add(5, 0.25);
    EXPECT_THROW(s.add(5, 1), ContractError);
    EXPECT_DOUBLE_EQ(final_window_mean(s, 10), 0.375);
    EXPECT_DOUBLE_EQ(final_window_mean(s, 1), 0.25);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

TEST(Report, EmptyBundleWritesManifestOnly)
{
    const auto dir = scratch("empty");
    Manifest m;
    m.config_text = to_text(ExperimentConfig{});
    const auto files = emit_report({}, dir, m);
    ASSERT_EQ(files.size(), 1u);
    EXPECT_EQ(files[0].filename(), "manifest.txt");
    EXPECT_TRUE(csv_files(dir).empty());
    fs::remove_all(dir);
}

TEST(Report, CsvRoundTrip)
{
    MetricBundle b;
    b.add("eval_return", 0, 1000, -1234.5);
    b.add("eval_return", 0, 2000, -321.0625);
    b.add("eval_return", 1, 1000, -1000.125);
    b.add("eval_return", 1, 2000, 0.1 + 0.2);
    b.add("weight_depth_1", 0, 1500, 0.75);
    const auto dir = scratch("roundtrip");
    emit_report(b, dir, Manifest{});
    EXPECT_EQ(read_report(dir), b);
    std::ifstream f(dir / "eval_return.csv");
    std::string header;
    std::getline(f, header);
    EXPECT_EQ(header, "step,iqm,ci_low,ci_high,seed_0,seed_1");
    fs::remove_all(dir);
}

TEST(Report, SingleSeedLeavesIntervalEmpty)
{
    std::map<std::uint64_t, MetricSeries> one;
    one[3].add(10, 1.0);
    const auto text = metric_csv("x", one, {});
    EXPECT_NE(text.find("10,1,,,1"), std::string::npos) << text;
}

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

TEST(Experiment, WarmupOnlyRunHasNoModelMetrics)
{
    auto c = smoke();
    c.total_steps = c.warmup_steps;
    c.eval_interval = 100;
    const auto r = run_experiment(c);
    EXPECT_EQ(r.metrics.series.count("model_loss"), 0u);
    EXPECT_EQ(r.metrics.series.count("critic_loss"), 0u);
    EXPECT_EQ(r.metrics.series.at("eval_return").at(0).size(), 2u);
    EXPECT_EQ(r.runs[0].env_store.size(), static_cast<std::size_t>(c.warmup_steps));
}

TEST(Experiment, ModelFreeVariantBuildsNoEnsemble)
{
    auto c = smoke();
    c.total_steps = 600;
    c.real_fraction = 1;
    const auto r = run_experiment(c);
    EXPECT_FALSE(r.runs[0].ensemble.has_value());
    EXPECT_EQ(r.metrics.series.count("model_loss"), 0u);
    EXPECT_TRUE(r.runs[0].model_store.empty());
}

TEST(Experiment, ModelStoreHoldsOneRefresh)
{
    auto c = smoke();
    c.total_steps = 800;
    const auto r = run_experiment(c);
    EXPECT_EQ(r.runs[0].model_store.size(), static_cast<std::size_t>(c.rollouts * c.effective_horizon()));
    // Refreshes at the first training step and every train_freq steps after it.
    EXPECT_EQ(r.metrics.series.at("model_loss").at(0).steps, (std::vector<long>{201, 701}));
    for (int t = 1; t <= c.effective_horizon(); ++t)
        EXPECT_EQ(r.metrics.series.count("weight_depth_" + std::to_string(t)), 1u);
}

TEST(Experiment, SameConfigAndSeedIsReproducible)
{
    auto c = smoke();
    c.total_steps = 700;
    const auto a = run_experiment(c);
    const auto b = run_experiment(c);
    EXPECT_EQ(a.metrics, b.metrics);
    c.seed = 1;
    EXPECT_NE(run_experiment(c).metrics, a.metrics);
}

TEST(Experiment, ZeroSigmaMakesWeightingNeutral)
{
    auto c = smoke();
    c.total_steps = 800;
    c.force_zero_sigma = true;
    c.weighting = true;
    const auto on = run_experiment(c);
    c.weighting = false;
    const auto off = run_experiment(c);
    EXPECT_EQ(on.metrics, off.metrics);
    const auto pa = make_checkpoint(on.runs[0]).network("policy").parameters().flatten();
    const auto pb = make_checkpoint(off.runs[0]).network("policy").parameters().flatten();
    EXPECT_EQ(pa, pb);
}

TEST(Experiment, WritesCheckpointsAndLogs)
{
    auto c = smoke();
    c.total_steps = 600;
    c.transition_log = true;
    const auto dir = scratch("outputs");
    const auto r = run_experiment(c);
    write_outputs(c, r, dir);
    EXPECT_TRUE(fs::exists(dir / "manifest.txt"));
    EXPECT_TRUE(fs::exists(dir / "eval_return.csv"));
    EXPECT_TRUE(fs::exists(dir / "env_store_seed0.log"));
    std::ifstream f(dir / "checkpoint_seed0.txt");
    const auto ck = load_checkpoint(f);
    EXPECT_EQ(ck.network("policy").parameters().flatten(), r.runs[0].agent.policy().net().parameters().flatten());
    EXPECT_EQ(ck.scalars.at("log_alpha"), r.runs[0].agent.temperature().log_alpha);
    std::ifstream log(dir / "env_store_seed0.log");
    EXPECT_EQ(buffers::read_transition_log(log).size(), 600u);
    fs::remove_all(dir);
}

// Regenerate with WIMLE_UPDATE_GOLDEN=1 after an intentional numerical change.
TEST(Golden, SmokeRunMatchesStoredCsv)
{
    const auto c = smoke();
    const auto dir = scratch("golden");
    write_outputs(c, run_experiment(c), dir);
    const fs::path golden = kData / "golden" / "smoke";
    if (std::getenv("WIMLE_UPDATE_GOLDEN")) {
        fs::create_directories(golden);
        for (const auto& name : csv_files(dir)) fs::copy_file(dir / name, golden / name, fs::copy_options::overwrite_existing);
    }
    ASSERT_TRUE(fs::exists(golden)) << "missing golden directory " << golden;
    EXPECT_EQ(csv_files(dir), csv_files(golden));
    for (const auto& name : csv_files(golden)) EXPECT_EQ(slurp(dir / name), slurp(golden / name)) << name;
    fs::remove_all(dir);
}
