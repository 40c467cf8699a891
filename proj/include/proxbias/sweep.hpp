#pragma once

#include "proxbias/bias.hpp"
#include "proxbias/lsem.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/rng.hpp"
#include "proxbias/types.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace proxbias {

// --- Parameter paths -------------------------------------------------------
//
// Sweep axes address spec coefficients by name with 1-based bracket indexing,
// matching the structural-equation subscripts: "theta_u[2]" is the loading of
// Z on U2 (single-column blocks), "rho[1,2]" a matrix entry, "alpha0" a
// scalar.
double read_param(const LsemSpec& spec, const std::string& path);
void write_param(LsemSpec& spec, const std::string& path, double value);
// True when changing the parameter invalidates the treatment moments.
bool param_affects_moments(const std::string& path);

// --- Sweep configuration ----------------------------------------------------

enum class OracleKind { none, population_gmm, monte_carlo };

struct SweepConfig {
    LsemSpec base_spec;
    std::string axis_path;
    double axis_lo = 0.0;
    double axis_hi = 0.0;
    int axis_steps = 0;
    struct Link {
        std::string path;
        double multiplier = 1.0;
    };
    std::vector<Link> linked;
    std::vector<std::string> estimators;  // subset of {"por", "or", "unadj"}
    OracleKind oracle = OracleKind::none;
    Eigen::Index mc_n = 0;
    int mc_seeds = 0;
    std::string output;
};

SweepConfig sweep_config_from_json(const std::string& text);
SweepConfig load_sweep_config(const std::string& path);

struct SweepRow {
    double axis = 0.0;
    std::optional<double> abs_por, abs_or, abs_unadj;
    std::optional<double> oracle_por, oracle_or, oracle_unadj;
    std::optional<double> oracle_por_se, oracle_or_se, oracle_unadj_se;
    bool pole = false;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::string> estimators;
    OracleKind oracle = OracleKind::none;
    std::string spec_hash;
    std::string moment_method;
    std::string axis_path;
    bool any_pole = false;
};

struct SweepOptions {
    int threads = 1;
    int quadrature_order = 60;
    std::uint64_t seed = 0;
    bool reuse_moments = true;  // skip recomputation when the axis leaves them fixed
};

// On-disk moment cache keyed by moments_cache_key; shared across CLI runs.
class MomentCache {
public:
    static MomentCache load(const std::string& path);
    void save(const std::string& path) const;
    const TreatmentMoments* find(const std::string& key) const;
    void put(const std::string& key, const TreatmentMoments& mom);

private:
    std::map<std::string, std::string> entries_;  // key -> moments JSON
};

SweepResult run_sweep(const SweepConfig& config, const SweepOptions& opts = {},
                      MomentCache* cache = nullptr);

// Deterministic CSV: '#'-prefixed metadata, one header row, %.17g values.
std::string sweep_to_csv(const SweepResult& result);

// --- Randomized spec families and verification batteries -------------------

enum class SpecFamily { zw, ay, general };

// Valid-by-construction draws, kept away from formula poles and
// ill-conditioned moment systems.
LsemSpec random_spec(SpecFamily family, CounterRng& rng);

struct VerifyBudget {
    int specs_per_family = 200;
    int theorem4_draws = 1000;
    static VerifyBudget small() { return {25, 100}; }
    static VerifyBudget standard() { return {200, 1000}; }
    static VerifyBudget large() { return {500, 5000}; }
};

struct BatteryResult {
    std::string name;
    bool pass = false;
    double worst = 0.0;
    std::string detail;
};

struct VerificationReport {
    std::vector<BatteryResult> batteries;
    bool all_pass() const {
        for (const auto& b : batteries)
            if (!b.pass) return false;
        return !batteries.empty();
    }
};

// Test hook: replaces the closed-form proximal bias in the equivalence
// battery, so a corrupted formula demonstrably fails it.
using PorBiasFn = std::function<double(const LsemSpec&, const TreatmentMoments&)>;

// family_tag in {"zw", "ay", "general", "all"}; throws on a zero/negative
// budget. Runs bridge certification, completeness certification, closed-form
// vs population-oracle equivalence, and the bias-comparison sign battery.
VerificationReport verify_all(const std::string& family_tag, const VerifyBudget& budget,
                              std::uint64_t seed = 20240901, PorBiasFn por_override = {});

std::string report_to_text(const VerificationReport& report);

// Embedded reference specs (also shipped as JSON presets).
LsemSpec base_case_spec();            // one-confounder setup, no violations
LsemSpec zw_reference_spec(double alpha_u1 = 0.3, double theta_u2 = 0.5, double mu_u2 = 0.5,
                      double mu_u1 = 0.5);
LsemSpec ay_reference_spec(double alpha_u1 = 0.5, double alpha_u2 = 0.7, double gamma_u1 = 1.5);
LsemSpec completeness_spec();         // theta_u2 = 0.7 witness setup with X

}  // namespace proxbias
