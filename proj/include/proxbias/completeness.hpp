#pragma once

#include "proxbias/lsem.hpp"
#include "proxbias/types.hpp"

#include <vector>

namespace proxbias {

// Witness that the proxy system cannot separate a two-dimensional confounder:
// a function g(U) with E[g(U) | Z, A, X] = 0 everywhere yet g not identically
// zero. Parameters are captured from a p = 2, q <= 1 spec; if only the second
// Z loading is nonzero the confounder coordinates are swapped internally.
struct CounterexampleG {
    double alpha0 = 0.0;
    double alpha_u1 = 0.0, alpha_u2 = 0.0;
    double alpha_x = 0.0;
    double theta0 = 0.0, theta_a = 0.0, theta_x = 0.0;
    double theta_u1 = 0.0, theta_u2 = 0.0;
    double rho1 = 0.0, rho2 = 0.0;
    double sigma1 = 1.0;  // sd of the Z noise
    bool has_x = false;
    bool swapped = false;  // confounder coordinates exchanged at capture
};

CounterexampleG make_counterexample(const LsemSpec& spec);

// The witness itself: a cubic in u2 times Gaussian-exponential factors times
// a cosh-type logistic factor. u is in the original confounder coordinates.
double g_value(const CounterexampleG& ce, const Vec& u, double x);

// E[g(U) | Z = z, A = a, X = x] by 2-D Gauss-Hermite quadrature against the
// self-normalized conditional density of U. Values near zero certify the
// completeness violation. Throws if the normalizing constant has not
// converged at the requested order. cubic_shift perturbs the constant in the
// cubic factor of g; a nonzero shift breaks the identity and is the
// sensitivity probe showing the certification has power.
double conditional_mean_g(const CounterexampleG& ce, double z, double a, double x, int order = 60,
                          double cubic_shift = 0.0);

struct CompletenessPoint {
    double z = 0.0;
    double a = 0.0;
    double x = 0.0;
    double value = 0.0;
};

struct CompletenessCertificate {
    std::vector<CompletenessPoint> table;  // conditional means over the grid
    double max_conditional = 0.0;          // max |E[g|Z,A,X]| over the grid
    double max_g = 0.0;                    // max |g| over the unit u-grid
};

// Standard certification: z in {-2..2}, a in {0,1}, x in {-1,0,1} when X is
// present; the witness magnitude is scanned over u in {-1,-0.5,0,0.5,1}^2.
CompletenessCertificate certify_completeness(const LsemSpec& spec, int order = 60);

}  // namespace proxbias
