// wimle: command-line front end.
//
//   wimle run --config FILE [--seed N] [--env NAME] [--out DIR] [--weighting on|off]
//             [--model imle|gaussian] [--horizon H] [--<any config key> VALUE]
//   wimle verify-theory [--instances N]
//   wimle gradcheck [--instances N]

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>

#include "wimle/gradcheck.hpp"
#include "wimle/harness/config.hpp"
#include "wimle/harness/experiment.hpp"
#include "wimle/theory.hpp"

namespace {

using namespace wimle;

int run_command(const std::string& config_path, const std::map<std::string, std::string>& overrides,
                std::string out_dir, bool quiet)
{
    harness::ExperimentConfig cfg = config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(config_path);
    for (const auto& [k, v] : overrides) harness::set_value(cfg, k, v);
    cfg.validate();

    if (out_dir.empty()) {
        const char* env = std::getenv("WIMLE_OUT_DIR");
        out_dir = env && *env ? env : "wimle_out";
    }
    harness::ProgressFn progress;
    if (!quiet)
        progress = [](std::uint64_t seed, long step, double ret) {
            std::cerr << "seed " << seed << " step " << step << " eval_return " << ret << '\n';
        };
    const auto res = harness::run_experiment(cfg, progress);
    harness::write_outputs(cfg, res, out_dir);
    std::cout << "wrote " << out_dir << '\n';
    return 0;
}

int verify_theory(int instances, std::uint64_t seed)
{
    bool ok = true;
    std::cout << std::setprecision(3);

    const auto fp = theory::check_fixed_point_invariance(instances, seed);
    const bool fp_ok = fp.failures == 0;
    ok &= fp_ok;
    std::cout << (fp_ok ? "PASS" : "FAIL") << "  weighted Bellman fixed point: " << fp.instances
              << " MDPs, worst |Q_w - Q_1| = " << fp.worst_weighted_vs_unweighted
              << ", worst |Q - direct solve| = " << fp.worst_vs_direct << " (tol 1e-8)\n";

    const auto gd = theory::check_gls_dominance(instances, seed);
    const bool gd_ok = gd.failures == 0;
    ok &= gd_ok;
    std::cout << (gd_ok ? "PASS" : "FAIL") << "  inverse-variance dominance: " << gd.instances
              << " instances, worst min eigenvalue of Cov(w) - Cov(GLS) = " << gd.worst_min_eigenvalue
              << " (tol -1e-10)\n";

    theory::LinearRegressionInstance ex;
    ex.design = Eigen::MatrixXd::Ones(2, 1);
    ex.theta_star = Eigen::VectorXd::Zero(1);
    ex.noise_var = Eigen::Vector2d(1, 4);
    const double v_gls = theory::wls_estimator(ex, theory::gls_weights(ex)).covariance(0, 0);
    const double v_uni = theory::wls_estimator(ex, Eigen::VectorXd::Ones(2)).covariance(0, 0);
    const bool ex_ok = std::abs(v_gls - 0.8) <= 1e-12 && std::abs(v_uni - 1.25) <= 1e-12;
    ok &= ex_ok;
    std::cout << std::setprecision(17) << (ex_ok ? "PASS" : "FAIL")
              << "  two-sample example: inverse-variance Var = " << v_gls << ", uniform Var = " << v_uni << '\n';
    return ok ? 0 : 1;
}

int run_gradcheck(int instances, std::uint64_t seed)
{
    const auto res = gradcheck::run_suite(instances, seed);
    std::map<std::string, gradcheck::Report> worst;
    for (const auto& r : res.reports) {
        auto& w = worst[r.name];
        w.name = r.name;
        w.checked += r.checked;
        w.failures += r.failures;
        if (r.max_rel_error >= w.max_rel_error) {
            w.max_rel_error = r.max_rel_error;
            w.worst = r.worst;
        }
    }
    std::cout << std::setprecision(3);
    for (const auto& [name, r] : worst)
        std::cout << (r.ok() ? "PASS" : "FAIL") << "  " << name << ": " << r.checked << " entries, max rel error "
                  << r.max_rel_error << " at " << r.worst << '\n';
    std::cout << res.instances << " instances, overall " << (res.ok() ? "PASS" : "FAIL") << '\n';
    return res.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"WIMLE world-model ensembles with confidence-weighted SAC"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "train an agent and write metrics, manifest and checkpoints");
    std::string config_path, out_dir;
    bool quiet = false;
    run->add_option("--config", config_path, "key = value configuration file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "output directory (default: $WIMLE_OUT_DIR or ./wimle_out)");
    run->add_flag("--quiet", quiet, "suppress progress on stderr");
    std::map<std::string, std::string> overrides;
    for (const auto& key : harness::config_keys()) {
        const std::string name = key.name;
        run->add_option_function<std::string>(
            "--" + name, [&overrides, name](const std::string& v) { overrides[name] = v; }, key.help);
    }

    auto* theory_cmd = app.add_subcommand("verify-theory", "numerical checks of the weighting results");
    int theory_instances = 1000;
    std::uint64_t theory_seed = 1;
    theory_cmd->add_option("--instances", theory_instances, "random instances per check")->check(CLI::PositiveNumber);
    theory_cmd->add_option("--seed", theory_seed, "instance generator seed");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every network gradient");
    int grad_instances = 20;
    std::uint64_t grad_seed = 1;
    grad_cmd->add_option("--instances", grad_instances, "random small problems")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--seed", grad_seed, "problem generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return run_command(config_path, overrides, out_dir, quiet);
        if (*theory_cmd) return verify_theory(theory_instances, theory_seed);
        if (*grad_cmd) return run_gradcheck(grad_instances, grad_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
