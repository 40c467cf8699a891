#include "proxbias/bias.hpp"
#include "proxbias/estimators.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/sweep.hpp"

#include <doctest.h>

#include <cmath>

using namespace proxbias;

TEST_CASE("proximal GMM is unbiased on the base case") {
    const LsemSpec s = base_case_spec();
    Dataset d = sample(s, 1000000, 17);
    const FitResult fit = fit_proximal_gmm(ObservedData(d));
    CHECK(std::abs(fit.psi_hat - true_ace(s)) < 3.0 * fit.se_psi);
    CHECK(fit.se_psi > 0.0);
}

TEST_CASE("proximal GMM converges to gamma_a plus the closed-form bias") {
    const LsemSpec s = zw_reference_spec();
    const TreatmentMoments mom = treatment_moments_quadrature(s, 60);
    const double delta = bias_por_zw(s, mom);
    Dataset d = sample(s, 1000000, 23);
    const FitResult fit = fit_proximal_gmm(ObservedData(d));
    CHECK(std::abs(fit.psi_hat - (true_ace(s) + delta)) < 3.0 * fit.se_psi);
}

TEST_CASE("a duplicated proxy column is an identification failure") {
    const LsemSpec s = zw_reference_spec();
    Dataset d = sample(s, 5000, 5);
    Dataset dup;
    dup.a = d.a;
    dup.y = d.y;
    dup.x = d.x;
    dup.u = d.u;
    dup.z.resize(d.rows(), 2);
    dup.z.col(0) = d.z.col(0);
    dup.z.col(1) = d.z.col(0);
    dup.w.resize(d.rows(), 2);
    dup.w.col(0) = d.w.col(0);
    dup.w.col(1) = d.w.col(0);
    CHECK_THROWS_AS(fit_proximal_gmm(ObservedData(dup)), SingularSystemError);
}

TEST_CASE("outcome regression recovers the ACE without confounding") {
    LsemSpec s = zw_reference_spec();
    s.alpha_u[0] = 0.0;
    s.gamma_u.setZero();
    s.gamma_au.setZero();
    Dataset d = sample(s, 400000, 29);
    const FitResult fit = fit_or(ObservedData(d));
    CHECK(std::abs(fit.psi_hat - true_ace(s)) < 3.0 * fit.se_psi);
}

TEST_CASE("outcome regression converges to the OLS bias limit") {
    const LsemSpec s = zw_reference_spec();
    const TreatmentMoments mom = treatment_moments_quadrature(s, 60);
    const double delta = bias_or_zw(s, mom);
    Dataset d = sample(s, 1000000, 31);
    const FitResult fit = fit_or(ObservedData(d));
    CHECK(std::abs(fit.psi_hat - (true_ace(s) + delta)) < 3.0 * fit.se_psi);
}

TEST_CASE("constant Z column makes the OLS design rank deficient") {
    const LsemSpec s = zw_reference_spec();
    Dataset d = sample(s, 5000, 37);
    d.z.setZero();
    CHECK_THROWS_AS(fit_or(ObservedData(d)), SingularSystemError);
}

TEST_CASE("unadjusted estimator") {
    SUBCASE("an empty arm is an error") {
        const LsemSpec s = zw_reference_spec();
        Dataset d = sample(s, 1000, 41);
        d.a.setOnes();
        CHECK_THROWS_AS(fit_unadj(ObservedData(d)), PreconditionError);
    }
    SUBCASE("no confounding: recovers gamma_a") {
        LsemSpec s = zw_reference_spec();
        s.alpha_u[0] = 0.0;
        s.gamma_u.setZero();
        s.gamma_au.setZero();
        Dataset d = sample(s, 400000, 43);
        const FitResult fit = fit_unadj(ObservedData(d));
        CHECK(std::abs(fit.psi_hat - true_ace(s)) < 3.0 * fit.se_psi);
    }
    SUBCASE("reference spec: converges to gamma_a plus the closed-form bias") {
        const LsemSpec s = zw_reference_spec();
        const TreatmentMoments mom = treatment_moments_quadrature(s, 60);
        const double delta = bias_unadj(s, mom);
        Dataset d = sample(s, 1000000, 47);
        const FitResult fit = fit_unadj(ObservedData(d));
        CHECK(std::abs(fit.psi_hat - (true_ace(s) + delta)) < 3.0 * fit.se_psi);
    }
}

TEST_CASE("estimators cannot see the confounder columns") {
    const LsemSpec s = zw_reference_spec();
    Dataset d = sample(s, 20000, 53);
    Dataset poisoned = d;
    poisoned.u.setConstant(1e12);  // sentinel garbage
    const ObservedData clean(d), dirty(poisoned);
    CHECK(fit_proximal_gmm(clean).psi_hat == fit_proximal_gmm(dirty).psi_hat);
    CHECK(fit_or(clean).psi_hat == fit_or(dirty).psi_hat);
    CHECK(fit_unadj(clean).psi_hat == fit_unadj(dirty).psi_hat);
}

TEST_CASE("population GMM limit is invariant to noise scale") {
    const LsemSpec s = zw_reference_spec();
    const TreatmentMoments mom = treatment_moments_quadrature(s, 60);
    LsemSpec scaled = s;
    scaled.noise_sd = {2.5, 3.0, 5.0};
    const double b1 = population_gmm(s, mom, BridgeForm::interacted).bias;
    const double b2 = population_gmm(scaled, mom, BridgeForm::interacted).bias;
    CHECK(b1 == doctest::Approx(b2).epsilon(1e-12));
}

TEST_CASE("population GMM agrees across quadrature and Monte Carlo moment sources") {
    const LsemSpec s = zw_reference_spec();
    const TreatmentMoments quad = treatment_moments_quadrature(s, 60);
    const TreatmentMoments mc = treatment_moments_mc(s, 2000000, 61);
    const double bq = population_gmm(s, quad, BridgeForm::interacted).bias;
    const double bm = population_gmm(s, mc, BridgeForm::interacted).bias;
    // est_error bounds the moment error; the bias map amplifies it by a
    // factor around 2 on this spec, so allow a Lipschitz margin of 3.
    CHECK(std::abs(bq - bm) < 3.0 * (quad.est_error + mc.est_error));
}

TEST_CASE("consistency ladder: estimation error shrinks with sample size") {
    const LsemSpec s = zw_reference_spec();
    const TreatmentMoments mom = treatment_moments_quadrature(s, 60);
    const double target_por = true_ace(s) + bias_por_zw(s, mom);
    const double target_or = true_ace(s) + bias_or_zw(s, mom);
    const double target_unadj = true_ace(s) + bias_unadj(s, mom);

    double small_err_por = 0, large_err_por = 0;
    double small_err_or = 0, large_err_or = 0;
    double small_err_unadj = 0, large_err_unadj = 0;
    const int reps = 10;
    for (int r = 0; r < reps; ++r) {
        Dataset d_small = sample(s, 2000, 300 + r);
        Dataset d_large = sample(s, 200000, 400 + r);
        const ObservedData os(d_small), ol(d_large);
        small_err_por += std::abs(fit_proximal_gmm(os).psi_hat - target_por);
        large_err_por += std::abs(fit_proximal_gmm(ol).psi_hat - target_por);
        small_err_or += std::abs(fit_or(os).psi_hat - target_or);
        large_err_or += std::abs(fit_or(ol).psi_hat - target_or);
        small_err_unadj += std::abs(fit_unadj(os).psi_hat - target_unadj);
        large_err_unadj += std::abs(fit_unadj(ol).psi_hat - target_unadj);
    }
    // 100x the data, ~10x the accuracy; require at least 3x.
    CHECK(large_err_por < small_err_por / 3.0);
    CHECK(large_err_or < small_err_or / 3.0);
    CHECK(large_err_unadj < small_err_unadj / 3.0);
}

TEST_CASE("no-interaction GMM fit converges to the general bias limit") {
    LsemSpec s = LsemSpec::zeros({3, 0, 2, 2});
    s.alpha0 = 0.2;
    s.alpha_u << 0.5, -0.4, 0.3;
    s.theta_a << 1.0, 0.5;
    s.theta_u << 1.0, 0.4, -0.6, 0.8, 0.3, -0.5;
    s.mu_u << 0.7, -0.3, 0.5, 0.6, -0.8, 0.4;
    s.gamma_u << 1.0, -0.7, 0.5;
    s.gamma_a = 0.5;
    const TreatmentMoments mom = treatment_moments_quadrature(s, 60);
    const double delta = bias_general(s, mom);
    Dataset d = sample(s, 500000, 83);
    const FitResult fit = fit_proximal_gmm(ObservedData(d), BridgeForm::no_interaction);
    CHECK(std::abs(fit.psi_hat - (true_ace(s) + delta)) < 3.0 * fit.se_psi);
}

TEST_CASE("fit results serialize to JSON rows") {
    const LsemSpec s = zw_reference_spec();
    Dataset d = sample(s, 20000, 71);
    const std::string row = to_json_row(fit_unadj(ObservedData(d)), "unadj");
    CHECK(row.find("\"estimator\":\"unadj\"") != std::string::npos);
    CHECK(row.find("psi_hat") != std::string::npos);
    CHECK(row.find("se_psi") != std::string::npos);
}
