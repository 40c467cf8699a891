#pragma once

#include "proxbias/lsem.hpp"
#include "proxbias/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace proxbias {

// Gauss-Hermite rule for the standard normal weight (total mass 1), nodes
// symmetrized about zero so sign-flip symmetries hold to high precision.
struct GaussHermiteRule {
    Vec nodes;
    Vec weights;
};
GaussHermiteRule gauss_hermite(int order);

enum class MomentMethod { quadrature, monte_carlo };

// The logistic-Gaussian treatment moments every bias formula consumes:
// E[A], E[A V] and E[A V V'] for V = (U, X). The (U,X)-marginal second
// moments of the A-weighted block are split into the named sub-blocks.
struct TreatmentMoments {
    double e_a = 0.0;  // E[A]
    Vec e_au;          // p, E[A U_i]
    Vec e_ax;          // q, E[A X_j]
    Mat e_auu;         // p x p, E[A U_i U_j]
    Mat e_aux;         // p x q, E[A U_i X_j]
    Mat e_axx;         // q x q, E[A X_i X_j]
    MomentMethod method = MomentMethod::quadrature;
    double est_error = 0.0;  // conservative absolute error bound

    int p() const { return static_cast<int>(e_au.size()); }
    int q() const { return static_cast<int>(e_ax.size()); }
};

// Violations of the moment-set inequalities E[A]E[AU_i^2] >= E[AU_i]^2 and
// (1-E[A])(1-E[AU_i^2]) >= E[AU_i]^2; empty when the set is coherent.
std::vector<std::string> check_moment_inequalities(const TreatmentMoments& mom);

// Deterministic tensor-product Gauss-Hermite evaluation after whitening the
// (U,X) covariance by its Cholesky factor. Only whitened directions carrying
// a nonzero logistic coefficient are integrated; the rest are recovered by
// conditional-Gaussian regression. Refuses more than 3 effective directions
// (cost grows as order^d); use the Monte Carlo path there. est_error comes
// from re-evaluating at half the order.
TreatmentMoments treatment_moments_quadrature(const LsemSpec& spec, int order = 60);

// Plug-in sample moments from the lsem row sampler (identical variates to
// lsem::sample for the same seed). est_error is 3 standard errors of the
// worst component.
TreatmentMoments treatment_moments_mc(const LsemSpec& spec, Eigen::Index n, std::uint64_t seed);

// Scalar ratios from the completeness-violation bias formulas:
//   S1 = (1-E[A])^2 / ((1-E[A])(1-E[AU1^2]) - E[AU1]^2)
//   S2 = E[A]^2 / (E[A]E[AU1^2] - E[AU1]^2)
// Both are strictly positive for any coherent moment set.
struct SFactors {
    double s1 = 0.0;
    double s2 = 0.0;
};
SFactors s_factors(const TreatmentMoments& mom);

//   R1 = E[AU1]E[AU2] / ((1-E[A])(1-E[AU1^2]) - E[AU1]^2)
//   R2 = (1 - E[A] - E[AU1^2]) / (E[A]E[AU1^2] - E[AU1]^2)
struct RFactors {
    double r1 = 0.0;
    double r2 = 0.0;
};
RFactors r_factors(const TreatmentMoments& mom);

// JSON round trip for caching between CLI runs; the cache key hashes exactly
// the spec fields the moments depend on (alpha block, rho, sigma_x) plus the
// method parameters.
std::string to_json(const TreatmentMoments& mom, int indent = 2);
TreatmentMoments moments_from_json(const std::string& text);
std::string moments_cache_key(const LsemSpec& spec, int order);

}  // namespace proxbias
