#include "proxbias/sweep.hpp"

#include "proxbias/bridge.hpp"
#include "proxbias/completeness.hpp"
#include "proxbias/estimators.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#ifndef PROXBIAS_BUILD_ID
#define PROXBIAS_BUILD_ID "unknown"
#endif

namespace proxbias {

using nlohmann::json;

// --- Parameter paths --------------------------------------------------------

namespace {

struct ParsedPath {
    std::string name;
    int i = -1;  // 0-based after parsing; -1 when absent
    int j = -1;
};

ParsedPath parse_path(const std::string& path) {
    ParsedPath out;
    const auto bracket = path.find('[');
    if (bracket == std::string::npos) {
        out.name = path;
        return out;
    }
    out.name = path.substr(0, bracket);
    if (path.back() != ']') throw PreconditionError("malformed parameter path: " + path);
    const std::string inside = path.substr(bracket + 1, path.size() - bracket - 2);
    const auto comma = inside.find(',');
    try {
        if (comma == std::string::npos) {
            out.i = std::stoi(inside) - 1;
        } else {
            out.i = std::stoi(inside.substr(0, comma)) - 1;
            out.j = std::stoi(inside.substr(comma + 1)) - 1;
        }
    } catch (const std::exception&) {
        throw PreconditionError("malformed parameter path: " + path);
    }
    if (out.i < 0 || (comma != std::string::npos && out.j < 0))
        throw PreconditionError("parameter indices are 1-based: " + path);
    return out;
}

double* locate(LsemSpec& spec, const ParsedPath& pp, const std::string& path) {
    auto scalar = [&](double& v) -> double* {
        if (pp.i >= 0) throw PreconditionError(path + ": scalar takes no index");
        return &v;
    };
    auto vec = [&](Vec& v) -> double* {
        if (pp.i < 0 || pp.j >= 0 || pp.i >= v.size())
            throw PreconditionError(path + ": needs one index within range");
        return &v[pp.i];
    };
    auto mat = [&](Mat& m) -> double* {
        if (pp.i < 0) throw PreconditionError(path + ": needs an index");
        if (pp.j >= 0) {
            if (pp.i >= m.rows() || pp.j >= m.cols())
                throw PreconditionError(path + ": index out of range");
            return &m(pp.i, pp.j);
        }
        if (m.cols() != 1 || pp.i >= m.rows())
            throw PreconditionError(path + ": single index needs a one-column block");
        return &m(pp.i, 0);
    };

    if (pp.name == "alpha0") return scalar(spec.alpha0);
    if (pp.name == "gamma0") return scalar(spec.gamma0);
    if (pp.name == "gamma_a") return scalar(spec.gamma_a);
    if (pp.name == "alpha_u") return vec(spec.alpha_u);
    if (pp.name == "alpha_x") return vec(spec.alpha_x);
    if (pp.name == "theta0") return vec(spec.theta0);
    if (pp.name == "theta_a") return vec(spec.theta_a);
    if (pp.name == "mu0") return vec(spec.mu0);
    if (pp.name == "gamma_u") return vec(spec.gamma_u);
    if (pp.name == "gamma_x") return vec(spec.gamma_x);
    if (pp.name == "gamma_au") return vec(spec.gamma_au);
    if (pp.name == "theta_u") return mat(spec.theta_u);
    if (pp.name == "theta_x") return mat(spec.theta_x);
    if (pp.name == "mu_u") return mat(spec.mu_u);
    if (pp.name == "mu_x") return mat(spec.mu_x);
    if (pp.name == "rho") return mat(spec.rho);
    if (pp.name == "sigma_x") return mat(spec.sigma_x);
    if (pp.name == "noise_sd") {
        if (pp.i < 0 || pp.i >= 3) throw PreconditionError(path + ": noise_sd index in 1..3");
        return &spec.noise_sd[static_cast<std::size_t>(pp.i)];
    }
    throw PreconditionError("unknown parameter: " + path);
}

}  // namespace

double read_param(const LsemSpec& spec, const std::string& path) {
    LsemSpec& mut = const_cast<LsemSpec&>(spec);
    return *locate(mut, parse_path(path), path);
}

void write_param(LsemSpec& spec, const std::string& path, double value) {
    const ParsedPath pp = parse_path(path);
    *locate(spec, pp, path) = value;
    // sigma_x is a correlation matrix; writing one off-diagonal entry writes
    // its mirror too
    if (pp.name == "sigma_x" && pp.j >= 0 && pp.i != pp.j) spec.sigma_x(pp.j, pp.i) = value;
}

bool param_affects_moments(const std::string& path) {
    const std::string name = parse_path(path).name;
    return name == "alpha0" || name == "alpha_u" || name == "alpha_x" || name == "rho" ||
           name == "sigma_x";
}

// --- Config -----------------------------------------------------------------

SweepConfig sweep_config_from_json(const std::string& text) {
    json j = json::parse(text);
    SweepConfig cfg;
    if (j.contains("base_spec_file"))
        cfg.base_spec = load_spec(j["base_spec_file"].get<std::string>());
    else
        cfg.base_spec = spec_from_json(j.at("base_spec").dump());

    const auto& ax = j.at("axis");
    cfg.axis_path = ax.at("path").get<std::string>();
    cfg.axis_lo = ax.at("lo").get<double>();
    cfg.axis_hi = ax.at("hi").get<double>();
    cfg.axis_steps = ax.at("steps").get<int>();

    if (j.contains("linked"))
        for (const auto& l : j["linked"])
            cfg.linked.push_back({l.at("path").get<std::string>(), l.at("multiplier").get<double>()});

    if (j.contains("estimators"))
        for (const auto& e : j["estimators"]) cfg.estimators.push_back(e.get<std::string>());
    else
        cfg.estimators = {"por", "or", "unadj"};

    if (j.contains("oracle")) {
        const auto& o = j["oracle"];
        const std::string kind = o.at("kind").get<std::string>();
        if (kind == "none")
            cfg.oracle = OracleKind::none;
        else if (kind == "population-gmm")
            cfg.oracle = OracleKind::population_gmm;
        else if (kind == "monte-carlo") {
            cfg.oracle = OracleKind::monte_carlo;
            cfg.mc_n = o.at("n").get<Eigen::Index>();
            cfg.mc_seeds = o.at("seeds").get<int>();
        } else
            throw PreconditionError("unknown oracle kind: " + kind);
    }
    if (j.contains("output")) cfg.output = j["output"].get<std::string>();
    return cfg;
}

SweepConfig load_sweep_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open sweep config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return sweep_config_from_json(ss.str());
}

// --- Moment cache -----------------------------------------------------------

MomentCache MomentCache::load(const std::string& path) {
    MomentCache cache;
    std::ifstream in(path);
    if (!in) return cache;
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return cache;
    for (const auto& [k, v] : j.items()) cache.entries_[k] = v.dump();
    return cache;
}

void MomentCache::save(const std::string& path) const {
    json j = json::object();
    for (const auto& [k, v] : entries_) j[k] = json::parse(v);
    std::ofstream out(path);
    out << j.dump(1) << "\n";
}

const TreatmentMoments* MomentCache::find(const std::string& key) const {
    static thread_local TreatmentMoments scratch;
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    scratch = moments_from_json(it->second);
    return &scratch;
}

void MomentCache::put(const std::string& key, const TreatmentMoments& mom) {
    entries_[key] = to_json(mom, -1);
}

// --- Sweep ------------------------------------------------------------------

namespace {

void validate_config(const SweepConfig& cfg) {
    if (cfg.axis_steps < 2) throw PreconditionError("sweep needs at least 2 steps");
    if (!(cfg.axis_lo < cfg.axis_hi)) throw PreconditionError("sweep needs lo < hi");
    for (const auto& l : cfg.linked)
        if (!std::isfinite(l.multiplier))
            throw PreconditionError("linked multiplier must be finite");
    if (cfg.estimators.empty()) throw PreconditionError("no estimators requested");
    for (const auto& e : cfg.estimators)
        if (e != "por" && e != "or" && e != "unadj")
            throw PreconditionError("unknown estimator: " + e);
    if (cfg.oracle == OracleKind::monte_carlo && (cfg.mc_n < 100 || cfg.mc_seeds < 1))
        throw PreconditionError("monte-carlo oracle needs n >= 100 and seeds >= 1");
    auto violations = validate(cfg.base_spec);
    if (!violations.empty()) {
        std::string msg = "invalid base spec:";
        for (const auto& v : violations) msg += "\n  - " + v;
        throw PreconditionError(msg);
    }
    if (classify_setup(cfg.base_spec) == BiasSetup::general &&
        std::find(cfg.estimators.begin(), cfg.estimators.end(), "or") != cfg.estimators.end())
        throw PreconditionError(
            "the adjusted-OLS closed form covers only the two-confounder shapes");
}

LsemSpec patched_spec(const SweepConfig& cfg, double axis_value) {
    LsemSpec s = cfg.base_spec;
    write_param(s, cfg.axis_path, axis_value);
    for (const auto& l : cfg.linked) write_param(s, l.path, l.multiplier * axis_value);
    return s;
}

bool wants(const SweepConfig& cfg, const char* est) {
    return std::find(cfg.estimators.begin(), cfg.estimators.end(), est) != cfg.estimators.end();
}

TreatmentMoments moments_for(const LsemSpec& spec, const SweepOptions& opts, MomentCache* cache) {
    const std::string key = moments_cache_key(spec, opts.quadrature_order);
    if (cache) {
        if (const TreatmentMoments* hit = cache->find(key)) return *hit;
    }
    TreatmentMoments mom;
    try {
        mom = treatment_moments_quadrature(spec, opts.quadrature_order);
    } catch (const PreconditionError&) {
        // more than 3 effective directions: Monte Carlo fallback
        mom = treatment_moments_mc(spec, 1000000, CounterRng::derive(opts.seed, 0x316d));
    }
    if (cache) cache->put(key, mom);
    return mom;
}

SweepRow evaluate_row(const SweepConfig& cfg, const SweepOptions& opts, double axis_value,
                      const LsemSpec& spec, const TreatmentMoments& mom, int row_index) {
    SweepRow row;
    row.axis = axis_value;
    const BiasSetup setup = classify_setup(spec);

    if (wants(cfg, "por")) {
        try {
            double d = 0.0;
            switch (setup) {
                case BiasSetup::zw_violation: d = bias_por_zw(spec, mom); break;
                case BiasSetup::ay_violation: d = bias_por_ay(spec, mom); break;
                case BiasSetup::general: d = bias_general(spec, mom); break;
            }
            row.abs_por = std::abs(d);
        } catch (const PoleError&) {
            row.pole = true;
        }
    }
    if (wants(cfg, "or")) {
        try {
            row.abs_or = std::abs(setup == BiasSetup::ay_violation ? bias_or_ay(spec, mom)
                                                                   : bias_or_zw(spec, mom));
        } catch (const SingularSystemError&) {
            row.pole = true;
        }
    }
    if (wants(cfg, "unadj")) row.abs_unadj = std::abs(bias_unadj(spec, mom));

    if (cfg.oracle == OracleKind::population_gmm) {
        const BridgeForm form =
            setup == BiasSetup::general ? BridgeForm::no_interaction : BridgeForm::interacted;
        if (wants(cfg, "por")) {
            try {
                row.oracle_por = std::abs(population_gmm(spec, mom, form).bias);
            } catch (const SingularSystemError&) {
                row.pole = true;
            }
        }
        if (wants(cfg, "or")) {
            try {
                row.oracle_or = std::abs(population_ols(spec, mom).bias);
            } catch (const SingularSystemError&) {
                row.pole = true;
            }
        }
        if (wants(cfg, "unadj"))
            row.oracle_unadj = std::abs(population_unadjusted(spec, mom).bias);
    } else if (cfg.oracle == OracleKind::monte_carlo) {
        auto mc_column = [&](const char* est, std::optional<double>& mean_out,
                             std::optional<double>& se_out) {
            double sum = 0.0, sumsq = 0.0;
            for (int rep = 0; rep < cfg.mc_seeds; ++rep) {
                const std::uint64_t seed = CounterRng::derive(
                    opts.seed, static_cast<std::uint64_t>(row_index) * 1024 + rep + 1);
                Dataset data = sample(spec, cfg.mc_n, seed);
                ObservedData obs(data);
                FitResult fit;
                if (std::string(est) == "por")
                    fit = fit_proximal_gmm(obs);
                else if (std::string(est) == "or")
                    fit = fit_or(obs);
                else
                    fit = fit_unadj(obs);
                const double bias = fit.psi_hat - true_ace(spec);
                sum += bias;
                sumsq += bias * bias;
            }
            const double k = static_cast<double>(cfg.mc_seeds);
            const double mean = sum / k;
            mean_out = std::abs(mean);
            se_out = cfg.mc_seeds > 1
                         ? std::sqrt(std::max(0.0, (sumsq - k * mean * mean) / (k - 1.0)) / k)
                         : 0.0;
        };
        if (wants(cfg, "por")) mc_column("por", row.oracle_por, row.oracle_por_se);
        if (wants(cfg, "or")) mc_column("or", row.oracle_or, row.oracle_or_se);
        if (wants(cfg, "unadj")) mc_column("unadj", row.oracle_unadj, row.oracle_unadj_se);
    }
    return row;
}

}  // namespace

SweepResult run_sweep(const SweepConfig& cfg, const SweepOptions& opts, MomentCache* cache) {
    validate_config(cfg);

    bool moments_fixed = !param_affects_moments(cfg.axis_path);
    for (const auto& l : cfg.linked) moments_fixed &= !param_affects_moments(l.path);
    moments_fixed &= opts.reuse_moments;

    const int steps = cfg.axis_steps;
    std::vector<double> axis(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        axis[static_cast<std::size_t>(i)] =
            cfg.axis_lo + (cfg.axis_hi - cfg.axis_lo) * i / (steps - 1);

    // Pre-validate every grid spec; a grid point escaping the admissible
    // region is a config error, not a runtime surprise.
    for (double v : axis) {
        LsemSpec s = patched_spec(cfg, v);
        auto violations = validate(s);
        if (!violations.empty())
            throw PreconditionError("grid point " + std::to_string(v) +
                                    " leaves the valid spec region: " + violations.front());
    }

    SweepResult result;
    result.rows.resize(static_cast<std::size_t>(steps));
    result.estimators = cfg.estimators;
    result.oracle = cfg.oracle;
    result.spec_hash = spec_hash(cfg.base_spec);
    result.axis_path = cfg.axis_path;

    TreatmentMoments shared_mom;
    if (moments_fixed) {
        shared_mom = moments_for(patched_spec(cfg, axis[0]), opts, cache);
        result.moment_method =
            shared_mom.method == MomentMethod::quadrature ? "quadrature" : "monte-carlo";
    }

    auto work = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const double v = axis[static_cast<std::size_t>(i)];
            LsemSpec s = patched_spec(cfg, v);
            TreatmentMoments mom = moments_fixed ? shared_mom : moments_for(s, opts, cache);
            if (i == 0 && !moments_fixed)
                result.moment_method =
                    mom.method == MomentMethod::quadrature ? "quadrature" : "monte-carlo";
            result.rows[static_cast<std::size_t>(i)] = evaluate_row(cfg, opts, v, s, mom, i);
        }
    };

    const int threads = std::max(1, opts.threads);
    if (threads == 1 || moments_fixed == false || steps < 2 * threads) {
        work(0, steps);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (steps + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int b = t * chunk, e = std::min(steps, (t + 1) * chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }

    for (const auto& r : result.rows) result.any_pole |= r.pole;
    return result;
}

std::string sweep_to_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "# proxbias sweep\n";
    out << "# spec_hash: " << result.spec_hash << "\n";
    out << "# build: " << PROXBIAS_BUILD_ID << "\n";
    out << "# moment_method: " << result.moment_method << "\n";
    out << "# axis: " << result.axis_path << "\n";

    auto has = [&](const char* e) {
        return std::find(result.estimators.begin(), result.estimators.end(), e) !=
               result.estimators.end();
    };
    out << "axis";
    if (has("por")) out << ",abs_bias_por";
    if (has("or")) out << ",abs_bias_or";
    if (has("unadj")) out << ",abs_bias_unadj";
    if (result.oracle == OracleKind::population_gmm) {
        if (has("por")) out << ",pop_bias_por";
        if (has("or")) out << ",pop_bias_or";
        if (has("unadj")) out << ",pop_bias_unadj";
    } else if (result.oracle == OracleKind::monte_carlo) {
        if (has("por")) out << ",mc_bias_por,mc_se_por";
        if (has("or")) out << ",mc_bias_or,mc_se_or";
        if (has("unadj")) out << ",mc_bias_unadj,mc_se_unadj";
    }
    out << ",flag\n";

    char buf[32];
    auto cell = [&](const std::optional<double>& v) {
        out << ",";
        if (v) {
            std::snprintf(buf, sizeof(buf), "%.17g", *v);
            out << buf;
        }
    };
    for (const auto& r : result.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.axis);
        out << buf;
        if (has("por")) cell(r.abs_por);
        if (has("or")) cell(r.abs_or);
        if (has("unadj")) cell(r.abs_unadj);
        if (result.oracle == OracleKind::population_gmm) {
            if (has("por")) cell(r.oracle_por);
            if (has("or")) cell(r.oracle_or);
            if (has("unadj")) cell(r.oracle_unadj);
        } else if (result.oracle == OracleKind::monte_carlo) {
            if (has("por")) {
                cell(r.oracle_por);
                cell(r.oracle_por_se);
            }
            if (has("or")) {
                cell(r.oracle_or);
                cell(r.oracle_or_se);
            }
            if (has("unadj")) {
                cell(r.oracle_unadj);
                cell(r.oracle_unadj_se);
            }
        }
        out << "," << (r.pole ? "pole" : "ok") << "\n";
    }
    return out.str();
}

// --- Random spec families ---------------------------------------------------

namespace {

double unif(CounterRng& rng, double lo, double hi) {
    return lo + (hi - lo) * rng.next_uniform();
}

double signed_mag(CounterRng& rng, double lo, double hi) {
    const double mag = unif(rng, lo, hi);
    return rng.next_u64() & 1 ? mag : -mag;
}

LsemSpec random_zw(CounterRng& rng) {
    LsemSpec s = LsemSpec::zeros({2, 0, 1, 1});
    s.alpha0 = unif(rng, -1.0, 1.0);
    s.alpha_u[0] = signed_mag(rng, 0.2, 1.2);
    s.theta0[0] = unif(rng, -1.0, 1.0);
    s.theta_a[0] = unif(rng, -1.5, 1.5);
    s.theta_u(0, 0) = signed_mag(rng, 0.4, 1.5);
    s.theta_u(1, 0) = unif(rng, -1.2, 1.2);
    s.mu0[0] = unif(rng, -1.0, 1.0);
    s.mu_u(0, 0) = signed_mag(rng, 0.4, 1.5);
    s.mu_u(1, 0) = unif(rng, -1.2, 1.2);
    s.gamma0 = unif(rng, -1.0, 1.0);
    s.gamma_a = unif(rng, -1.0, 1.0);
    s.gamma_u[0] = unif(rng, -2.0, 2.0);
    s.gamma_au[0] = unif(rng, -2.0, 2.0);
    for (auto& sd : s.noise_sd) sd = unif(rng, 0.7, 1.8);
    return s;
}

LsemSpec random_ay(CounterRng& rng) {
    LsemSpec s = LsemSpec::zeros({2, 0, 1, 1});
    s.alpha0 = unif(rng, -1.0, 1.0);
    s.alpha_u[0] = signed_mag(rng, 0.2, 1.2);
    s.alpha_u[1] = signed_mag(rng, 0.2, 1.0);
    s.theta0[0] = unif(rng, -1.0, 1.0);
    s.theta_a[0] = unif(rng, -1.5, 1.5);
    s.theta_u(0, 0) = signed_mag(rng, 0.4, 1.5);
    s.mu0[0] = unif(rng, -1.0, 1.0);
    s.mu_u(0, 0) = signed_mag(rng, 0.4, 1.5);
    s.gamma0 = unif(rng, -1.0, 1.0);
    s.gamma_a = unif(rng, -1.0, 1.0);
    s.gamma_u[0] = unif(rng, -2.0, 2.0);
    s.gamma_u[1] = signed_mag(rng, 0.3, 1.5);
    s.gamma_au[0] = unif(rng, -2.0, 2.0);
    for (auto& sd : s.noise_sd) sd = unif(rng, 0.7, 1.8);
    return s;
}

LsemSpec random_general(CounterRng& rng) {
    const int m = 1 + static_cast<int>(rng.next_u64() % 3);
    const int p = m + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(4 - m + 1));
    const int q = static_cast<int>(rng.next_u64() % 3);
    LsemSpec s = LsemSpec::zeros({p, q, m, m});

    s.alpha0 = unif(rng, -1.0, 1.0);
    // At most 3 confounder directions drive the treatment so the quadrature
    // path stays open; alpha_x stays zero for the same reason.
    std::vector<int> order(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = p - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[rng.next_u64() % static_cast<std::uint64_t>(i + 1)]);
    const int active = std::min(3, p);
    for (int k = 0; k < active; ++k)
        s.alpha_u[order[static_cast<std::size_t>(k)]] = signed_mag(rng, 0.2, 1.0);

    for (int i = 0; i < m; ++i) {
        s.theta0[i] = unif(rng, -1.0, 1.0);
        s.theta_a[i] = unif(rng, -1.5, 1.5);
        s.mu0[i] = unif(rng, -1.0, 1.0);
    }
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < m; ++j) {
            s.theta_u(i, j) = unif(rng, -1.5, 1.5);
            s.mu_u(i, j) = unif(rng, -1.5, 1.5);
        }
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < m; ++j) {
            s.theta_x(i, j) = unif(rng, -0.8, 0.8);
            s.mu_x(i, j) = unif(rng, -0.8, 0.8);
        }
    for (int i = 0; i < p; ++i) s.gamma_u[i] = unif(rng, -1.5, 1.5);
    for (int i = 0; i < q; ++i) s.gamma_x[i] = unif(rng, -1.0, 1.0);
    s.gamma0 = unif(rng, -1.0, 1.0);
    s.gamma_a = unif(rng, -1.0, 1.0);
    for (auto& sd : s.noise_sd) sd = unif(rng, 0.7, 1.8);

    if (q == 2) {
        const double r = unif(rng, -0.6, 0.6);
        s.sigma_x(0, 1) = r;
        s.sigma_x(1, 0) = r;
    }
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) s.rho(i, j) = unif(rng, -0.4, 0.4);
    return s;
}

}  // namespace

LsemSpec random_spec(SpecFamily family, CounterRng& rng) {
    for (int attempt = 0; attempt < 400; ++attempt) {
        LsemSpec s;
        switch (family) {
            case SpecFamily::zw: s = random_zw(rng); break;
            case SpecFamily::ay: s = random_ay(rng); break;
            case SpecFamily::general: s = random_general(rng); break;
        }
        if (!validate(s).empty()) continue;
        try {
            const TreatmentMoments mom = treatment_moments_quadrature(s, 40);
            if (!check_moment_inequalities(mom).empty()) continue;
            if (mom.e_a < 0.1 || mom.e_a > 0.9) continue;
            if (family == SpecFamily::zw) {
                const SFactors sf = s_factors(mom);
                const double t = s.theta_u(1, 0) / s.theta_u(0, 0) * s.mu_u(1, 0);
                const double d1 = s.mu_u(0, 0) + sf.s1 * t;
                const double d2 = s.mu_u(0, 0) + sf.s2 * t;
                const double scale = std::max(1.0, std::abs(s.mu_u(0, 0)));
                if (std::abs(d1) < 0.05 * scale || std::abs(d2) < 0.05 * scale) continue;
            } else if (family == SpecFamily::general) {
                const double delta = bias_general(s, mom);
                if (!std::isfinite(delta) || std::abs(delta) > 100.0) continue;
            }
        } catch (const Error&) {
            continue;
        }
        return s;
    }
    throw Error("random_spec failed to find an admissible draw (family constraints too tight)");
}

// --- Embedded reference specs ------------------------------------------------

LsemSpec base_case_spec() {
    LsemSpec s = LsemSpec::zeros({1, 1, 1, 1});
    s.alpha0 = 0.2;
    s.alpha_u[0] = 0.5;
    s.alpha_x[0] = -0.3;
    s.rho(0, 0) = 0.25;
    s.theta0[0] = 0.4;
    s.theta_a[0] = 1.0;
    s.theta_u(0, 0) = 1.0;
    s.theta_x(0, 0) = 0.6;
    s.mu0[0] = 0.3;
    s.mu_u(0, 0) = 0.5;
    s.mu_x(0, 0) = -0.4;
    s.gamma0 = 0.5;
    s.gamma_a = 0.5;
    s.gamma_u[0] = 1.0;
    s.gamma_x[0] = 0.7;
    s.gamma_au[0] = 1.5;
    return s;
}

LsemSpec zw_reference_spec(double alpha_u1, double theta_u2, double mu_u2, double mu_u1) {
    LsemSpec s = LsemSpec::zeros({2, 0, 1, 1});
    s.alpha_u[0] = alpha_u1;
    s.theta_a[0] = 1.0;
    s.theta_u(0, 0) = 1.0;
    s.theta_u(1, 0) = theta_u2;
    s.mu_u(0, 0) = mu_u1;
    s.mu_u(1, 0) = mu_u2;
    s.gamma_a = 0.5;
    s.gamma_u[0] = 1.0;
    s.gamma_au[0] = 1.5;
    s.noise_sd = {1.0, 1.0, 2.0};
    return s;
}

LsemSpec ay_reference_spec(double alpha_u1, double alpha_u2, double gamma_u1) {
    LsemSpec s = LsemSpec::zeros({2, 0, 1, 1});
    s.alpha_u[0] = alpha_u1;
    s.alpha_u[1] = alpha_u2;
    s.theta_a[0] = 1.0;
    s.theta_u(0, 0) = 1.0;
    s.mu_u(0, 0) = 1.0;
    s.gamma_a = 0.5;
    s.gamma_u[0] = gamma_u1;
    s.gamma_u[1] = 1.0;
    s.gamma_au[0] = 1.0;
    return s;
}

LsemSpec completeness_spec() {
    LsemSpec s = LsemSpec::zeros({2, 1, 1, 1});
    s.alpha0 = 0.3;
    s.alpha_u[0] = 0.3;
    s.alpha_u[1] = 0.4;
    s.alpha_x[0] = 0.2;
    s.theta0[0] = 0.1;
    s.theta_a[0] = 1.0;
    s.theta_u(0, 0) = 1.0;
    s.theta_u(1, 0) = 0.7;
    s.theta_x(0, 0) = 0.5;
    s.rho(0, 0) = 0.2;
    s.rho(1, 0) = -0.3;
    s.mu_u(0, 0) = 0.5;
    s.mu_u(1, 0) = 0.3;
    s.mu_x(0, 0) = 0.2;
    s.gamma_a = 0.5;
    s.gamma_u[0] = 1.0;
    s.gamma_u[1] = 0.5;
    s.gamma_x[0] = 0.3;
    return s;
}

// --- Verification batteries ---------------------------------------------------

namespace {

BatteryResult bridge_battery() {
    BatteryResult b;
    b.name = "bridge-certification";
    const LsemSpec spec = base_case_spec();
    const OutcomeBridgeParams bridge = solve_outcome_bridge_base(spec);
    const double residual = fredholm_residual(bridge, spec, standard_bridge_grid(spec));

    const TreatmentMoments mom = treatment_moments_quadrature(spec, 60);
    const PopulationFit fit = population_gmm(spec, mom, BridgeForm::interacted);
    Vec closed(6);
    closed << bridge.b0, bridge.b_a, bridge.b_w[0], bridge.b_x[0], bridge.b_ax[0], bridge.b_aw[0];
    const double coef_diff = (fit.coefficients - closed).cwiseAbs().maxCoeff();
    const double ace_diff = std::abs(ace_from_bridge(spec, bridge) - true_ace(spec));

    b.worst = std::max({residual, coef_diff, ace_diff});
    b.pass = residual < 1e-8 && coef_diff < 1e-10 && ace_diff < 1e-12;
    std::ostringstream os;
    os << "fredholm residual " << residual << ", population-vs-closed coefficient gap "
       << coef_diff;
    b.detail = os.str();
    return b;
}

BatteryResult completeness_battery() {
    BatteryResult b;
    b.name = "completeness-certification";
    const CompletenessCertificate cert = certify_completeness(completeness_spec(), 60);
    b.worst = cert.max_conditional;
    b.pass = cert.max_conditional < 1e-6 && cert.max_g > 1e-2;
    std::ostringstream os;
    os << "max |E[g|Z,A,X]| = " << cert.max_conditional << ", max |g| = " << cert.max_g;
    b.detail = os.str();
    return b;
}

BatteryResult equivalence_battery(const std::string& family_tag, const VerifyBudget& budget,
                                  std::uint64_t seed, const PorBiasFn& por_override) {
    BatteryResult b;
    b.name = "oracle-equivalence";
    std::vector<SpecFamily> families;
    if (family_tag == "zw" || family_tag == "all") families.push_back(SpecFamily::zw);
    if (family_tag == "ay" || family_tag == "all") families.push_back(SpecFamily::ay);
    if (family_tag == "general" || family_tag == "all") families.push_back(SpecFamily::general);
    if (families.empty()) throw PreconditionError("unknown spec family tag: " + family_tag);

    double worst = 0.0;
    int count = 0;
    for (SpecFamily family : families) {
        CounterRng rng(CounterRng::derive(seed, static_cast<std::uint64_t>(family) + 17));
        for (int i = 0; i < budget.specs_per_family; ++i) {
            const LsemSpec spec = random_spec(family, rng);
            // Every 5th general draw goes through the Monte Carlo moment path
            // so both engines are exercised; agreement is moment-noise free
            // because both sides consume the same moment set.
            TreatmentMoments mom;
            if (family == SpecFamily::general && i % 5 == 4)
                mom = treatment_moments_mc(spec, 200000, CounterRng::derive(seed, 7000 + i));
            else
                mom = treatment_moments_quadrature(spec, 60);

            double por_closed = 0.0;
            PopulationFit por_oracle;
            if (family == SpecFamily::general) {
                por_closed = por_override ? por_override(spec, mom) : bias_general(spec, mom);
                por_oracle = population_gmm(spec, mom, BridgeForm::no_interaction);
            } else if (family == SpecFamily::zw) {
                por_closed = por_override ? por_override(spec, mom) : bias_por_zw(spec, mom);
                por_oracle = population_gmm(spec, mom, BridgeForm::interacted);
            } else {
                por_closed = por_override ? por_override(spec, mom) : bias_por_ay(spec, mom);
                por_oracle = population_gmm(spec, mom, BridgeForm::interacted);
            }
            worst = std::max(worst, std::abs(por_closed - por_oracle.bias));

            if (family != SpecFamily::general) {
                const double or_closed = family == SpecFamily::zw ? bias_or_zw(spec, mom)
                                                                  : bias_or_ay(spec, mom);
                worst = std::max(worst, std::abs(or_closed - population_ols(spec, mom).bias));
            }
            worst = std::max(worst,
                             std::abs(bias_unadj(spec, mom) - population_unadjusted(spec, mom).bias));
            ++count;
        }
    }
    b.worst = worst;
    b.pass = worst < 1e-6;
    std::ostringstream os;
    os << count << " specs, worst |closed-form - oracle| = " << worst;
    b.detail = os.str();
    return b;
}

BatteryResult theorem4_battery(const VerifyBudget& budget, std::uint64_t seed) {
    BatteryResult b;
    b.name = "bias-comparison-battery";
    CounterRng rng(CounterRng::derive(seed, 0x7431));
    int same_sign_fail = 0, verdict_fail = 0, evaluated = 0;
    double worst_margin = std::numeric_limits<double>::infinity();

    for (int i = 0; i < budget.theorem4_draws; ++i) {
        LsemSpec spec = random_spec(SpecFamily::zw, rng);
        spec.gamma_au[0] = 0.0;
        if (spec.gamma_u[0] == 0.0) spec.gamma_u[0] = 1.0;
        // make theta_u2 mu_u2 comfortably nonzero
        if (std::abs(spec.theta_u(1, 0)) < 0.2) spec.theta_u(1, 0) = 0.4;
        if (std::abs(spec.mu_u(1, 0)) < 0.2) spec.mu_u(1, 0) = 0.4;

        const bool same_sign = (i % 2) == 0;
        const double t1 = spec.theta_u(0, 0) * spec.mu_u(0, 0);
        double t2 = spec.theta_u(1, 0) * spec.mu_u(1, 0);
        if ((t1 > 0) != (t2 > 0) ? same_sign : !same_sign) {
            spec.mu_u(1, 0) = -spec.mu_u(1, 0);
            t2 = -t2;
        }

        const TreatmentMoments mom = treatment_moments_quadrature(spec, 60);
        double por = 0.0, unadj = 0.0;
        bool pole = false;
        try {
            por = bias_por_zw(spec, mom);
            unadj = bias_unadj(spec, mom);
        } catch (const PoleError&) {
            pole = true;
        }
        const BiasComparison cmp = compare_biases_zw(spec, mom);
        if (cmp.verdict == ComparisonVerdict::pole || pole) continue;
        if (std::abs(por_unadj_ratio(mom, cmp.r) - 1.0) <= 1e-6) continue;  // tie boundary
        ++evaluated;

        if (same_sign) {
            if (!(std::abs(por) < std::abs(unadj))) ++same_sign_fail;
            worst_margin = std::min(worst_margin, std::abs(unadj) - std::abs(por));
        } else {
            const bool por_better = std::abs(por) < std::abs(unadj);
            const bool predicted =
                cmp.verdict == ComparisonVerdict::por_dominates;
            if (por_better != predicted) ++verdict_fail;
        }
    }
    b.pass = same_sign_fail == 0 && verdict_fail == 0 && evaluated > 0;
    b.worst = static_cast<double>(same_sign_fail + verdict_fail);
    std::ostringstream os;
    os << evaluated << " draws, " << same_sign_fail << " same-sign violations, " << verdict_fail
       << " verdict mismatches";
    b.detail = os.str();
    return b;
}

}  // namespace

VerificationReport verify_all(const std::string& family_tag, const VerifyBudget& budget,
                              std::uint64_t seed, PorBiasFn por_override) {
    if (budget.specs_per_family < 1 || budget.theorem4_draws < 1)
        throw PreconditionError("verification budget must be positive");
    VerificationReport report;
    report.batteries.push_back(bridge_battery());
    report.batteries.push_back(completeness_battery());
    report.batteries.push_back(equivalence_battery(family_tag, budget, seed, por_override));
    if (family_tag == "zw" || family_tag == "all")
        report.batteries.push_back(theorem4_battery(budget, seed));
    return report;
}

std::string report_to_text(const VerificationReport& report) {
    std::ostringstream os;
    for (const auto& b : report.batteries)
        os << (b.pass ? "PASS" : "FAIL") << "  " << b.name << "  (" << b.detail << ")\n";
    os << (report.all_pass() ? "all batteries passed" : "SOME BATTERIES FAILED") << "\n";
    return os.str();
}

}  // namespace proxbias
