#include "proxbias/bridge.hpp"
#include "proxbias/estimators.hpp"
#include "proxbias/lsem.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/sweep.hpp"

#include <doctest.h>

#include <cmath>

using namespace proxbias;

TEST_CASE("no-confounding outcome bridge ignores W") {
    LsemSpec s = base_case_spec();
    s.gamma_u[0] = 0.0;
    s.gamma_au[0] = 0.0;
    const OutcomeBridgeParams b = solve_outcome_bridge_base(s);
    CHECK(b.b0 == doctest::Approx(s.gamma0));
    CHECK(b.b_a == doctest::Approx(s.gamma_a));
    CHECK(b.b_x[0] == doctest::Approx(s.gamma_x[0]));
    CHECK(b.b_w[0] == 0.0);
    CHECK(b.b_ax[0] == 0.0);
    CHECK(b.b_aw[0] == 0.0);
}

TEST_CASE("centered W model pins the intercept coefficients") {
    LsemSpec s = base_case_spec();
    s.mu0[0] = 0.0;
    s.mu_x(0, 0) = 0.0;
    const OutcomeBridgeParams b = solve_outcome_bridge_base(s);
    CHECK(b.b0 == doctest::Approx(s.gamma0));
    CHECK(b.b_a == doctest::Approx(s.gamma_a));
    CHECK(b.b_ax[0] == 0.0);
}

TEST_CASE("outcome bridge requires mu_u != 0") {
    LsemSpec s = base_case_spec();
    s.mu_u(0, 0) = 0.0;
    CHECK_THROWS_AS(solve_outcome_bridge_base(s), PreconditionError);
}

TEST_CASE("base-case bridge satisfies the integral equation on the standard grid") {
    const LsemSpec s = base_case_spec();
    const OutcomeBridgeParams b = solve_outcome_bridge_base(s);
    CHECK(fredholm_residual(b, s, standard_bridge_grid(s)) < 1e-8);
}

TEST_CASE("zero-confounding spec with the trivial bridge has near-zero residual") {
    LsemSpec s = base_case_spec();
    s.gamma_u[0] = 0.0;
    s.gamma_au[0] = 0.0;
    OutcomeBridgeParams b;
    b.b0 = s.gamma0;
    b.b_a = s.gamma_a;
    b.b_w = Vec::Zero(1);
    b.b_x = Vec::Constant(1, s.gamma_x[0]);
    b.b_ax = Vec::Zero(1);
    b.b_aw = Vec::Zero(1);
    CHECK(fredholm_residual(b, s, standard_bridge_grid(s)) < 1e-10);
}

TEST_CASE("a perturbed W loading is visible in the residual") {
    LsemSpec s = base_case_spec();
    s.gamma_u[0] = 1.0;
    s.mu_u(0, 0) = 1.0;
    OutcomeBridgeParams b = solve_outcome_bridge_base(s);
    b.b_w[0] += 0.1;
    CHECK(fredholm_residual(b, s, standard_bridge_grid(s)) > 0.01);
}

TEST_CASE("uniqueness witness: any single-coefficient deviation shows up") {
    const LsemSpec s = base_case_spec();
    const OutcomeBridgeParams ref = solve_outcome_bridge_base(s);
    const auto grid = standard_bridge_grid(s);
    auto perturbed_residual = [&](int which) {
        OutcomeBridgeParams b = ref;
        switch (which) {
            case 0: b.b0 += 1e-3; break;
            case 1: b.b_a += 1e-3; break;
            case 2: b.b_w[0] += 1e-3; break;
            case 3: b.b_x[0] += 1e-3; break;
            case 4: b.b_ax[0] += 1e-3; break;
            case 5: b.b_aw[0] += 1e-3; break;
        }
        return fredholm_residual(b, s, grid);
    };
    for (int which = 0; which < 6; ++which) CHECK(perturbed_residual(which) >= 1e-4);
}

TEST_CASE("population moment solver reproduces the closed-form bridge") {
    const LsemSpec s = base_case_spec();
    const OutcomeBridgeParams b = solve_outcome_bridge_base(s);
    const TreatmentMoments mom = treatment_moments_quadrature(s, 60);
    const PopulationFit fit = population_gmm(s, mom, BridgeForm::interacted);
    Vec closed(6);
    closed << b.b0, b.b_a, b.b_w[0], b.b_x[0], b.b_ax[0], b.b_aw[0];
    CHECK((fit.coefficients - closed).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("the proximal g-formula with the base bridge returns the true ACE exactly") {
    const LsemSpec s = base_case_spec();
    const OutcomeBridgeParams b = solve_outcome_bridge_base(s);
    CHECK(ace_from_bridge(s, b) == doctest::Approx(true_ace(s)).epsilon(1e-15));
}

TEST_CASE("treatment bridge closed forms") {
    SUBCASE("alpha_u = 0 decouples the bridge from Z") {
        LsemSpec s = base_case_spec();
        s.alpha_u[0] = 0.0;
        const TreatmentBridgeParams t = solve_treatment_bridge_base(s);
        CHECK(t.t0 == doctest::Approx(-s.alpha0));
        CHECK(t.t_a == 0.0);
        CHECK(t.t_x == doctest::Approx(-s.alpha_x[0]));
        CHECK(t.t_z == 0.0);
    }
    SUBCASE("direct substitution at unit loading") {
        LsemSpec s = LsemSpec::zeros({1, 0, 1, 1});
        s.theta_u(0, 0) = 1.0;
        s.mu_u(0, 0) = 1.0;
        const double au = 0.8;
        s.alpha_u[0] = au;
        const TreatmentBridgeParams t = solve_treatment_bridge_base(s);
        CHECK(t.t0 == doctest::Approx(0.5 * au * au));
        CHECK(t.t_a == doctest::Approx(-au * au));
        CHECK(t.t_x == 0.0);
        CHECK(t.t_z == doctest::Approx(-au));
    }
    SUBCASE("theta_u = 0 has no bridge") {
        LsemSpec s = base_case_spec();
        s.theta_u(0, 0) = 0.0;
        CHECK_THROWS_AS(solve_treatment_bridge_base(s), PreconditionError);
    }
}

TEST_CASE("treatment bridge inverse-probability identity holds in simulation") {
    LsemSpec s = base_case_spec();
    s.gamma_au[0] = 0.0;  // irrelevant to q, kept simple
    const TreatmentBridgeParams t = solve_treatment_bridge_base(s);
    Dataset d = sample(s, 400000, 77);
    double sum0 = 0.0, sum1 = 0.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        const double q = q_bridge_value(t, d.z(i, 0), d.a[i], d.x(i, 0));
        if (d.a[i] > 0.5)
            sum1 += q;
        else
            sum0 += q;
    }
    const double n = static_cast<double>(d.rows());
    // E[q(Z,a,X) 1{A=a}] = 1 for both arms; q has heavier tails than the
    // observables, so the tolerance is loose.
    CHECK(std::abs(sum1 / n - 1.0) < 0.02);
    CHECK(std::abs(sum0 / n - 1.0) < 0.02);
}

TEST_CASE("fredholm residual rejects an empty grid") {
    const LsemSpec s = base_case_spec();
    const OutcomeBridgeParams b = solve_outcome_bridge_base(s);
    CHECK_THROWS_AS(fredholm_residual(b, s, {}), PreconditionError);
}
