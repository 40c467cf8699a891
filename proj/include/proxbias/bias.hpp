#pragma once

#include "proxbias/lsem.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/types.hpp"

#include <map>
#include <optional>
#include <string>

namespace proxbias {

// The two 2-dimensional-confounder violation shapes plus the general
// multi-dimensional shape without effect modification.
enum class BiasSetup { zw_violation, ay_violation, general };

BiasSetup classify_setup(const LsemSpec& spec);
std::string setup_name(BiasSetup s);

// Asymptotic bias of the proximal outcome-regression estimator when the
// extra confounder component only links the negative controls
// (alpha_u2 = gamma_u2 = 0). Throws PoleError within 1e-6 of a vanishing
// denominator mu_u1 + S_i (theta_u2/theta_u1) mu_u2.
double bias_por_zw(const LsemSpec& spec, const TreatmentMoments& mom);

// Asymptotic bias of the adjusted OLS estimator (regress Y on
// 1, Z, W, A, AZ, AW; standardize over covariate means) for the q = 0,
// one-dimensional-proxy shapes. Exact normal-equation evaluation.
double bias_or_zw(const LsemSpec& spec, const TreatmentMoments& mom);
double bias_or_ay(const LsemSpec& spec, const TreatmentMoments& mom);

// Asymptotic bias of the difference-in-means estimator.
double bias_unadj(const LsemSpec& spec, const TreatmentMoments& mom);

// Asymptotic proximal bias when the extra confounder component touches only
// (A, Y): theta_u2 = mu_u2 = 0. Depends on gamma_u2 alone among the outcome
// coefficients, entering through E[AU2] and the E[AU1 U2] coupling.
double bias_por_ay(const LsemSpec& spec, const TreatmentMoments& mom);

// General multi-dimensional bias (no effect modification, dim(Z) = dim(W)):
// delta = beta (I_p - mu_u (B'mu_u)^-1 B') gamma_u. Uses the Moore-Penrose
// inverse when p < m; with p >= m a condition number above 1e8 raises
// SingularSystemError.
double bias_general(const LsemSpec& spec, const TreatmentMoments& mom);

// |delta_POR / delta_unadj| as the exact rational function of r =
// theta_u1 mu_u1 / (theta_u2 mu_u2) in the ZW shape with gamma_au1 = 0.
double por_unadj_ratio(const TreatmentMoments& mom, double r);

enum class ComparisonVerdict { por_dominates, unadj_dominates, pole };

struct BiasComparison {
    ComparisonVerdict verdict = ComparisonVerdict::por_dominates;
    double r = 0.0;       // theta_u1 mu_u1 / (theta_u2 mu_u2)
    double r_star = 0.0;  // -S1(1-E[A]) - S2 E[A]
    double s1 = 0.0;
    double s2 = 0.0;
};

// Ranks |delta_POR| against |delta_unadj| in the ZW shape with gamma_au1 = 0
// via the exact ratio |f(r)|: same-sign association products always favour
// the proximal estimator; opposite signs favour it exactly where |f(r)| < 1
// (r* marks the f = +1 crossing); at r = -S1 or r = -S2 the proximal bias is
// unbounded and the verdict is pole.
BiasComparison compare_biases_zw(const LsemSpec& spec, const TreatmentMoments& mom);

struct BiasReport {
    double delta_por = 0.0;
    std::optional<double> delta_or;
    double delta_unadj = 0.0;
    BiasSetup setup = BiasSetup::general;
    std::map<std::string, double> intermediates;
};

BiasReport bias_report(const LsemSpec& spec, const TreatmentMoments& mom);
std::string to_json(const BiasReport& report, int indent = 2);

}  // namespace proxbias
