#pragma once

#include "proxbias/lsem.hpp"
#include "proxbias/types.hpp"

#include <vector>

namespace proxbias {

// h(W, A, X; b) = b0 + b_a A + b_w'W + b_x'X + b_ax'(AX) + b_aw'(AW)
struct OutcomeBridgeParams {
    double b0 = 0.0;
    double b_a = 0.0;
    Vec b_w;   // n
    Vec b_x;   // q
    Vec b_ax;  // q
    Vec b_aw;  // n
};

// q(Z, A, X; t) = 1 + exp{(-1)^(1-A) (t0 + t_z Z + t_a A + t_x X)}
struct TreatmentBridgeParams {
    double t0 = 0.0;
    double t_a = 0.0;
    double t_x = 0.0;
    double t_z = 0.0;
};

// Closed-form solutions for the one-confounder base case (p = m = n = 1,
// q <= 1). The outcome bridge needs mu_u != 0, the treatment bridge theta_u != 0.
OutcomeBridgeParams solve_outcome_bridge_base(const LsemSpec& spec);
TreatmentBridgeParams solve_treatment_bridge_base(const LsemSpec& spec);

double q_bridge_value(const TreatmentBridgeParams& t, double z, double a, double x);

// ACE recovered from a bridge via the proximal g-formula:
// psi = E[h(W,1,X) - h(W,0,X)] = b_a + b_aw'E[W] + b_ax'E[X].
double ace_from_bridge(const LsemSpec& spec, const OutcomeBridgeParams& bridge);

struct BridgeGridPoint {
    Vec z;      // m
    double a = 0.0;
    Vec x;      // q
};

// z and x in conditional-standard-deviation units, z,x in {-2..2}, a in {0,1}.
std::vector<BridgeGridPoint> standard_bridge_grid(const LsemSpec& spec);

// Certifies a candidate bridge against the defining integral equation:
// max over the grid of |E[Y|Z=z,A=a,X=x] - E[h(W,a,x)|Z=z,A=a,X=x]|, both
// sides evaluated through the same closed-form Gaussian conditional mean of
// U given (z, a, x). Exact solutions give zero up to roundoff; any
// coefficient mismatch shows up linearly in the grid values.
double fredholm_residual(const OutcomeBridgeParams& bridge, const LsemSpec& spec,
                         const std::vector<BridgeGridPoint>& grid);

}  // namespace proxbias
