#pragma once

#include "proxbias/lsem.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/types.hpp"

#include <string>
#include <vector>

namespace proxbias {

// Bridge feature sets from the moment-restriction estimator. The interacted
// form pairs h = (1, A, W, X, AX, AW) with instruments (1, A, Z, X, AZ, AX);
// the no-interaction form pairs (1, A, W, X) with (1, A, Z, X). Both systems
// are square exactly when dim(Z) = dim(W).
enum class BridgeForm { interacted, no_interaction };

struct FitResult {
    double psi_hat = 0.0;  // ACE estimate
    Vec bridge_hat;        // stacked coefficient vector of the fitted model
    std::vector<std::string> coef_names;
    Eigen::Index n = 0;
    double se_psi = 0.0;   // plug-in (sandwich) standard error
};

std::string to_json_row(const FitResult& fit, const std::string& estimator);

// --- Population-moment engine -------------------------------------------
//
// Every observable in the LSEM is affine in the basis
//   (1, A, U, X, AU, AX, eps, A*eps),
// and all pairwise expectations of basis elements are exact functions of the
// spec coefficients and the treatment moments. Cross-moment matrices of any
// feature set follow by bilinearity, which gives the asymptotic (population)
// version of each estimator as a single linear solve.
class PopulationModel {
public:
    PopulationModel(const LsemSpec& spec, const TreatmentMoments& mom);

    using Var = Vec;  // coefficient vector over the basis

    Var one() const;
    Var treat() const;
    Var z(int i) const;
    Var w(int j) const;
    Var x(int k) const;
    Var y() const;
    Var times_a(const Var& v) const;

    double product(const Var& a, const Var& b) const { return a.dot(gram_ * b); }

    const LsemSpec& spec() const { return spec_; }

private:
    const LsemSpec& spec_;
    Mat gram_;
    int p_, q_, m_, n_;
    int basis_size_;

    int idx_one() const { return 0; }
    int idx_a() const { return 1; }
    int idx_u(int i) const { return 2 + i; }
    int idx_x(int k) const { return 2 + p_ + k; }
    int idx_au(int i) const { return 2 + p_ + q_ + i; }
    int idx_ax(int k) const { return 2 + 2 * p_ + q_ + k; }
    int idx_eps(int c) const { return 2 + 2 * p_ + 2 * q_ + c; }        // c in [0, m+n+1)
    int idx_aeps(int c) const { return 2 + 2 * p_ + 2 * q_ + (m_ + n_ + 1) + c; }
};

struct PopulationFit {
    Vec coefficients;
    std::vector<std::string> coef_names;
    double psi = 0.0;   // asymptotic estimate
    double bias = 0.0;  // psi - gamma_a
    double condition = 0.0;
};

// Asymptotic limit of the moment-restriction estimator: solves the exactly
// identified population conditions E[(Y - h)Q] = 0, then psi = b_a + b_aw'E[W].
PopulationFit population_gmm(const LsemSpec& spec, const TreatmentMoments& mom,
                             BridgeForm form = BridgeForm::interacted);

// Asymptotic limit of OLS of Y on (1, Z, W, A, AZ, AW [, X, AX]) with the
// ACE read off by standardization at the covariate means.
PopulationFit population_ols(const LsemSpec& spec, const TreatmentMoments& mom);

// Asymptotic limit of the difference-in-means estimator.
PopulationFit population_unadjusted(const LsemSpec& spec, const TreatmentMoments& mom);

// --- Finite-sample estimators ---------------------------------------------

// Proximal outcome-regression estimator: one linear solve of the sample
// moment conditions (they are linear in b, so the GMM objective hits zero),
// then psi_hat as the sample average of h(W,1,X) - h(W,0,X).
FitResult fit_proximal_gmm(const ObservedData& data, BridgeForm form = BridgeForm::interacted);

// OLS of Y on (1, Z, W, A, AZ, AW [, X, AX]); psi_hat standardizes over the
// empirical covariate distribution.
FitResult fit_or(const ObservedData& data);

// Difference of arm means.
FitResult fit_unadj(const ObservedData& data);

}  // namespace proxbias
