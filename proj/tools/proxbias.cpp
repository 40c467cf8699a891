#include "proxbias/bias.hpp"
#include "proxbias/bridge.hpp"
#include "proxbias/completeness.hpp"
#include "proxbias/estimators.hpp"
#include "proxbias/lsem.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/sweep.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace proxbias;

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot write to " + path);
    out << text;
}

TreatmentMoments moments_with_cache(const LsemSpec& spec, int order,
                                    const std::string& cache_path) {
    if (cache_path.empty()) return treatment_moments_quadrature(spec, order);
    MomentCache cache = MomentCache::load(cache_path);
    const std::string key = moments_cache_key(spec, order);
    if (const TreatmentMoments* hit = cache.find(key)) return *hit;
    TreatmentMoments mom = treatment_moments_quadrature(spec, order);
    cache.put(key, mom);
    cache.save(cache_path);
    return mom;
}

int cmd_bias(const std::string& config, int order, const std::string& cache_path,
             const std::string& out) {
    const LsemSpec spec = load_spec(config);
    require_valid(spec);
    const TreatmentMoments mom = moments_with_cache(spec, order, cache_path);
    const BiasReport report = bias_report(spec, mom);
    write_text(out, to_json(report) + "\n");
    return 0;
}

int cmd_fit(const std::string& config, long long n, std::uint64_t seed,
            const std::string& estimator, const std::string& form_name, const std::string& out) {
    const LsemSpec spec = load_spec(config);
    BridgeForm form = BridgeForm::interacted;
    if (form_name == "no-interaction")
        form = BridgeForm::no_interaction;
    else if (form_name != "interacted")
        throw PreconditionError("--form must be interacted or no-interaction");
    Dataset data = sample(spec, n, seed);
    ObservedData obs(data);
    std::string rows;
    if (estimator == "por" || estimator == "all")
        rows += to_json_row(fit_proximal_gmm(obs, form), "por") + "\n";
    if (estimator == "or" || estimator == "all") rows += to_json_row(fit_or(obs), "or") + "\n";
    if (estimator == "unadj" || estimator == "all")
        rows += to_json_row(fit_unadj(obs), "unadj") + "\n";
    if (rows.empty()) throw PreconditionError("unknown estimator: " + estimator);
    write_text(out, rows);
    return 0;
}

int cmd_sweep(const std::string& config, const std::string& out, std::uint64_t seed, int threads,
              int order, const std::string& cache_path) {
    SweepConfig cfg = load_sweep_config(config);
    SweepOptions opts;
    opts.seed = seed;
    opts.threads = threads;
    opts.quadrature_order = order;

    MomentCache cache;
    MomentCache* cache_ptr = nullptr;
    if (!cache_path.empty()) {
        cache = MomentCache::load(cache_path);
        cache_ptr = &cache;
    }
    const SweepResult result = run_sweep(cfg, opts, cache_ptr);
    if (cache_ptr) cache.save(cache_path);

    const std::string dest = !out.empty() ? out : cfg.output;
    write_text(dest, sweep_to_csv(result));
    if (!dest.empty() && dest != "-")
        std::cerr << result.rows.size() << " rows -> " << dest
                  << (result.any_pole ? " (pole rows flagged)" : "") << "\n";
    return result.any_pole ? 2 : 0;
}

int cmd_certify_bridge(const std::string& config, int order) {
    const LsemSpec spec = config.empty() ? base_case_spec() : load_spec(config);
    const OutcomeBridgeParams bridge = solve_outcome_bridge_base(spec);
    const double residual = fredholm_residual(bridge, spec, standard_bridge_grid(spec));

    const TreatmentMoments mom = treatment_moments_quadrature(spec, order);
    const PopulationFit fit = population_gmm(spec, mom, BridgeForm::interacted);
    Vec closed(4 + 2 * spec.dims.q);
    if (spec.dims.q == 1)
        closed << bridge.b0, bridge.b_a, bridge.b_w[0], bridge.b_x[0], bridge.b_ax[0],
            bridge.b_aw[0];
    else
        closed << bridge.b0, bridge.b_a, bridge.b_w[0], bridge.b_aw[0];
    const double coef_gap = (fit.coefficients - closed).cwiseAbs().maxCoeff();
    const double ace_gap = std::abs(ace_from_bridge(spec, bridge) - true_ace(spec));

    std::printf("fredholm_residual %.3e   (tolerance 1e-8)\n", residual);
    std::printf("moment_solver_coefficient_gap %.3e   (tolerance 1e-10)\n", coef_gap);
    std::printf("ace_recovery_gap %.3e\n", ace_gap);
    const bool pass = residual < 1e-8 && coef_gap < 1e-10;
    std::printf("certify-bridge: %s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

int cmd_certify_completeness(const std::string& config, int order, const std::string& out) {
    const LsemSpec spec = config.empty() ? completeness_spec() : load_spec(config);
    const CompletenessCertificate cert = certify_completeness(spec, order);

    std::string csv = "z,a,x,conditional_mean_g\n";
    char buf[128];
    for (const auto& pt : cert.table) {
        std::snprintf(buf, sizeof(buf), "%.17g,%g,%.17g,%.17g\n", pt.z, pt.a, pt.x, pt.value);
        csv += buf;
    }
    if (!out.empty()) write_text(out, csv);

    std::printf("max_conditional_mean %.3e   (tolerance 1e-6)\n", cert.max_conditional);
    std::printf("max_g_on_unit_grid %.3e   (must exceed 1e-2)\n", cert.max_g);
    const bool pass = cert.max_conditional < 1e-6 && cert.max_g > 1e-2;
    std::printf("certify-completeness: %s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

int cmd_verify(const std::string& family, const std::string& budget_name, std::uint64_t seed) {
    VerifyBudget budget = VerifyBudget::standard();
    if (budget_name == "small")
        budget = VerifyBudget::small();
    else if (budget_name == "large")
        budget = VerifyBudget::large();
    else if (budget_name != "default")
        throw PreconditionError("budget must be small, default, or large");
    const VerificationReport report = verify_all(family, budget, seed);
    std::cout << report_to_text(report);
    return report.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"closed-form bias engine for proximal inference under linear SEMs"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config, out, cache_path;
    std::uint64_t seed = 0;
    int threads = 1;
    int order = 60;
    app.add_option("--config", config, "spec or sweep config (JSON)");
    app.add_option("--seed", seed, "root seed for anything stochastic");
    app.add_option("--threads", threads, "worker threads for sweeps");
    app.add_option("--quadrature-order", order, "Gauss-Hermite order per dimension");
    app.add_option("--out", out, "output path ('-' for stdout)");
    app.add_option("--moment-cache", cache_path, "JSON cache file for treatment moments");

    auto* sweep_cmd = app.add_subcommand("sweep", "run a sensitivity sweep, emit CSV");
    auto* bias_cmd = app.add_subcommand("bias", "closed-form bias report for one spec");
    auto* fit_cmd = app.add_subcommand("fit", "fit estimators on a simulated sample");
    long long fit_n = 100000;
    std::string estimator = "all";
    std::string form_name = "interacted";
    fit_cmd->add_option("--n", fit_n, "sample size");
    fit_cmd->add_option("--estimator", estimator, "por | or | unadj | all");
    fit_cmd->add_option("--form", form_name, "bridge features: interacted | no-interaction");
    auto* bridge_cmd = app.add_subcommand("certify-bridge", "certify the base-case bridge");
    auto* compl_cmd =
        app.add_subcommand("certify-completeness", "certify the completeness counterexample");
    auto* verify_cmd = app.add_subcommand("verify", "run the verification batteries");
    std::string family = "all", budget = "default";
    verify_cmd->add_option("--family", family, "zw | ay | general | all");
    verify_cmd->add_option("--budget", budget, "small | default | large");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sweep_cmd->parsed()) {
            if (config.empty()) throw PreconditionError("sweep needs --config");
            return cmd_sweep(config, out, seed, threads, order, cache_path);
        }
        if (bias_cmd->parsed()) {
            if (config.empty()) throw PreconditionError("bias needs --config");
            return cmd_bias(config, order, cache_path, out);
        }
        if (fit_cmd->parsed()) {
            if (config.empty()) throw PreconditionError("fit needs --config");
            return cmd_fit(config, fit_n, seed, estimator, form_name, out);
        }
        if (bridge_cmd->parsed()) return cmd_certify_bridge(config, order);
        if (compl_cmd->parsed()) return cmd_certify_completeness(config, order, out);
        if (verify_cmd->parsed()) return cmd_verify(family, budget, seed ? seed : 20240901);
    } catch (const proxbias::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
