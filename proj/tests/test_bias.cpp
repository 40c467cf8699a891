#include "proxbias/bias.hpp"
#include "proxbias/estimators.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/rng.hpp"
#include "proxbias/sweep.hpp"

#include <doctest.h>

#include <cmath>

using namespace proxbias;

namespace {

// Reference values for the reference presets, frozen from the population
// oracles (moment solver / normal equations) at quadrature order 60 and
// confirmed by finite-sample fits.
constexpr double kZwRefPor = 1.737240073000060e-01;
constexpr double kZwRefOr = -4.151276708817501e-01;
constexpr double kZwRefUnadj = 5.136877063427101e-01;
constexpr double kAyRefPor = 6.322264837669265e-01;
constexpr double kAyRefOr = 2.846952689179034e-01;
constexpr double kAyRefUnadj = 1.464217512378698e+00;

TreatmentMoments quad60(const LsemSpec& s) { return treatment_moments_quadrature(s, 60); }

}  // namespace

TEST_CASE("zw proximal bias vanishes with the second proxy loading") {
    LsemSpec s = zw_reference_spec();
    s.theta_u(1, 0) = 0.0;
    CHECK(bias_por_zw(s, quad60(s)) == 0.0);
}

TEST_CASE("zw proximal bias vanishes without treatment-confounder coupling") {
    LsemSpec s = zw_reference_spec();
    s.alpha_u[0] = 0.0;
    CHECK(std::abs(bias_por_zw(s, quad60(s))) < 1e-13);
}

TEST_CASE("reference zw biases match frozen oracle values") {
    const LsemSpec s = zw_reference_spec();
    const TreatmentMoments mom = quad60(s);
    CHECK(bias_por_zw(s, mom) == doctest::Approx(kZwRefPor).epsilon(1e-9));
    CHECK(bias_or_zw(s, mom) == doctest::Approx(kZwRefOr).epsilon(1e-9));
    CHECK(bias_unadj(s, mom) == doctest::Approx(kZwRefUnadj).epsilon(1e-9));
}

TEST_CASE("zw closed forms equal their population oracles") {
    const LsemSpec s = zw_reference_spec();
    const TreatmentMoments mom = quad60(s);
    CHECK(bias_por_zw(s, mom) ==
          doctest::Approx(population_gmm(s, mom, BridgeForm::interacted).bias).epsilon(1e-10));
    CHECK(bias_or_zw(s, mom) == doctest::Approx(population_ols(s, mom).bias).epsilon(1e-10));
    CHECK(bias_unadj(s, mom) ==
          doctest::Approx(population_unadjusted(s, mom).bias).epsilon(1e-12));
}

TEST_CASE("adjusted OLS bias vanishes in the degenerate cases") {
    SUBCASE("no outcome-confounder couplings at all") {
        LsemSpec s = zw_reference_spec();
        s.gamma_u[0] = 0.0;
        s.gamma_au[0] = 0.0;
        CHECK(std::abs(bias_or_zw(s, quad60(s))) < 1e-12);
    }
    SUBCASE("treatment disconnected from confounders and proxies") {
        LsemSpec s = zw_reference_spec();
        s.theta_a[0] = 0.0;
        s.alpha_u[0] = 0.0;
        CHECK(std::abs(bias_or_zw(s, quad60(s))) < 1e-12);
    }
}

TEST_CASE("unadjusted bias is zero without confounders in either equation") {
    LsemSpec s = zw_reference_spec();
    SUBCASE("alpha_u = 0") {
        s.alpha_u[0] = 0.0;
        CHECK(std::abs(bias_unadj(s, quad60(s))) < 1e-14);
    }
    SUBCASE("gamma_u = gamma_au = 0") {
        s.gamma_u.setZero();
        s.gamma_au.setZero();
        CHECK(bias_unadj(s, quad60(s)) == 0.0);
    }
}

TEST_CASE("ay proximal bias zero cases") {
    LsemSpec s = ay_reference_spec();
    SUBCASE("gamma_u2 = 0") {
        s.gamma_u[1] = 0.0;
        CHECK(bias_por_ay(s, quad60(s)) == 0.0);
    }
    SUBCASE("alpha_u2 = 0 kills E[AU2] and the coupling") {
        s.alpha_u[1] = 0.0;
        CHECK(std::abs(bias_por_ay(s, quad60(s))) < 1e-13);
    }
}

TEST_CASE("reference ay biases match frozen oracle values") {
    const LsemSpec s = ay_reference_spec();
    const TreatmentMoments mom = quad60(s);
    CHECK(bias_por_ay(s, mom) == doctest::Approx(kAyRefPor).epsilon(1e-9));
    CHECK(bias_or_ay(s, mom) == doctest::Approx(kAyRefOr).epsilon(1e-9));
    CHECK(bias_unadj(s, mom) == doctest::Approx(kAyRefUnadj).epsilon(1e-9));
    CHECK(bias_por_ay(s, mom) ==
          doctest::Approx(population_gmm(s, mom, BridgeForm::interacted).bias).epsilon(1e-10));
    CHECK(bias_or_ay(s, mom) == doctest::Approx(population_ols(s, mom).bias).epsilon(1e-10));
}

TEST_CASE("ay adjusted OLS bias vanishes without outcome-confounder couplings") {
    LsemSpec s = ay_reference_spec();
    s.gamma_u.setZero();
    s.gamma_au.setZero();
    CHECK(std::abs(bias_or_ay(s, quad60(s))) < 1e-12);
}

TEST_CASE("the proximal bias grows without bound approaching the pole") {
    LsemSpec s = zw_reference_spec();
    s.gamma_au[0] = 0.0;
    const TreatmentMoments mom = quad60(s);
    const SFactors sf = s_factors(mom);
    const double smin = std::min(sf.s1, sf.s2);
    double prev = 0.0;
    for (double eps : {0.2, 0.1, 0.05, 0.025}) {
        // set mu_u1 so that r = -min(S1,S2) + eps
        LsemSpec close = s;
        close.mu_u(0, 0) =
            (-smin + eps) * s.theta_u(1, 0) * s.mu_u(1, 0) / s.theta_u(0, 0);
        const double mag = std::abs(bias_por_zw(close, mom));
        CHECK(mag > prev);
        prev = mag;
    }
    CHECK(prev > 10.0);
}

TEST_CASE("ay proximal bias ignores gamma_u1, gamma_au1 and theta_a") {
    LsemSpec s = ay_reference_spec();
    const double base = bias_por_ay(s, quad60(s));
    s.gamma_u[0] += 0.7;
    s.gamma_au[0] -= 1.3;
    s.theta_a[0] += 0.9;
    CHECK(bias_por_ay(s, quad60(s)) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("randomized closed forms agree with the population oracles") {
    CounterRng rng(2024);
    for (int i = 0; i < 20; ++i) {
        const LsemSpec s = random_spec(i % 2 == 0 ? SpecFamily::zw : SpecFamily::ay, rng);
        const TreatmentMoments mom = quad60(s);
        const double por = i % 2 == 0 ? bias_por_zw(s, mom) : bias_por_ay(s, mom);
        const double por_oracle = population_gmm(s, mom, BridgeForm::interacted).bias;
        CHECK(std::abs(por - por_oracle) < 1e-8);
        const double olsb = i % 2 == 0 ? bias_or_zw(s, mom) : bias_or_ay(s, mom);
        CHECK(std::abs(olsb - population_ols(s, mom).bias) < 1e-8);
        CHECK(std::abs(bias_unadj(s, mom) - population_unadjusted(s, mom).bias) < 1e-10);
    }
}

TEST_CASE("general bias: full proxy rank means zero bias") {
    CounterRng rng(555);
    int done = 0;
    while (done < 5) {
        LsemSpec s = random_spec(SpecFamily::general, rng);
        if (s.dims.p != s.dims.m) continue;
        CHECK(std::abs(bias_general(s, quad60(s))) < 1e-10);
        ++done;
    }
}

TEST_CASE("general bias: gamma_u = 0 gives zero") {
    CounterRng rng(556);
    LsemSpec s = random_spec(SpecFamily::general, rng);
    s.gamma_u.setZero();
    CHECK(bias_general(s, quad60(s)) == 0.0);
}

TEST_CASE("general bias equals the no-interaction moment solver") {
    CounterRng rng(557);
    for (int i = 0; i < 12; ++i) {
        const LsemSpec s = random_spec(SpecFamily::general, rng);
        const TreatmentMoments mom = quad60(s);
        const double closed = bias_general(s, mom);
        const double oracle = population_gmm(s, mom, BridgeForm::no_interaction).bias;
        CHECK(std::abs(closed - oracle) < 1e-8);
    }
}

TEST_CASE("general bias via Moore-Penrose when U is lower-dimensional than the proxies") {
    // p = 1 < m = n = 2: a single confounder proxied twice over; the
    // pseudo-inverse projection removes it entirely.
    LsemSpec s = LsemSpec::zeros({1, 0, 2, 2});
    s.alpha_u[0] = 0.6;
    s.theta_u << 1.0, 0.5;
    s.mu_u << 0.8, -0.4;
    s.theta_a << 1.0, 0.3;
    s.gamma_u[0] = 1.2;
    s.gamma_a = 0.5;
    const double delta = bias_general(s, quad60(s));
    CHECK(std::isfinite(delta));
    CHECK(std::abs(delta) < 1e-12);
}

TEST_CASE("general bias is invariant under confounder rotations when rho = 0") {
    LsemSpec s = LsemSpec::zeros({3, 0, 2, 2});
    CounterRng rng(31);
    auto fill = [&](double lo, double hi) { return lo + (hi - lo) * rng.next_uniform(); };
    s.alpha0 = 0.3;
    for (int i = 0; i < 3; ++i) s.alpha_u[i] = fill(-0.8, 0.8);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            s.theta_u(i, j) = fill(-1.2, 1.2);
            s.mu_u(i, j) = fill(-1.2, 1.2);
        }
    for (int j = 0; j < 2; ++j) {
        s.theta0[j] = fill(-1, 1);
        s.theta_a[j] = fill(-1, 1);
        s.mu0[j] = fill(-1, 1);
    }
    for (int i = 0; i < 3; ++i) s.gamma_u[i] = fill(-1.5, 1.5);
    s.gamma_a = 0.5;

    const double base = bias_general(s, quad60(s));

    // Householder rotation; recompute the moments on the rotated spec rather
    // than rotating moment vectors.
    Vec v(3);
    v << 1.0, -2.0, 0.5;
    const Mat rot = Mat::Identity(3, 3) - 2.0 / v.squaredNorm() * (v * v.transpose());
    LsemSpec r = s;
    r.alpha_u = rot.transpose() * s.alpha_u;
    r.theta_u = rot.transpose() * s.theta_u;
    r.mu_u = rot.transpose() * s.mu_u;
    r.gamma_u = rot.transpose() * s.gamma_u;
    const double rotated = bias_general(r, quad60(r));
    CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("proximal pole is signalled, not returned as a huge number") {
    LsemSpec s = zw_reference_spec();
    const TreatmentMoments mom = quad60(s);
    const SFactors sf = s_factors(mom);
    // place mu_u2 exactly on the D2 = 0 pole
    s.mu_u(1, 0) = -s.mu_u(0, 0) * s.theta_u(0, 0) / (sf.s2 * s.theta_u(1, 0));
    CHECK_THROWS_AS(bias_por_zw(s, mom), PoleError);
}

TEST_CASE("ratio law |por/unadj| = f(r)") {
    CounterRng rng(808);
    for (int i = 0; i < 10; ++i) {
        LsemSpec s = random_spec(SpecFamily::zw, rng);
        s.gamma_au[0] = 0.0;
        if (s.gamma_u[0] == 0.0) s.gamma_u[0] = 1.0;
        const TreatmentMoments mom = quad60(s);
        const double r = s.theta_u(0, 0) * s.mu_u(0, 0) / (s.theta_u(1, 0) * s.mu_u(1, 0));
        const double lhs = std::abs(bias_por_zw(s, mom) / bias_unadj(s, mom));
        CHECK(lhs == doctest::Approx(por_unadj_ratio(mom, r)).epsilon(1e-10));
    }
}

TEST_CASE("comparison verdicts") {
    SUBCASE("same-sign association products: proximal dominates") {
        LsemSpec s = zw_reference_spec();  // theta_u1 mu_u1 = 0.5, theta_u2 mu_u2 = 0.25
        s.gamma_au[0] = 0.0;
        const BiasComparison cmp = compare_biases_zw(s, quad60(s));
        CHECK(cmp.verdict == ComparisonVerdict::por_dominates);
        CHECK(cmp.r > 0.0);
    }
    SUBCASE("r below r*: proximal dominates despite the sign flip") {
        LsemSpec s = zw_reference_spec(0.3, 0.2, -0.2, 1.5);  // r = 1.5/(-0.04) far below r*
        s.gamma_au[0] = 0.0;
        const TreatmentMoments mom = quad60(s);
        const BiasComparison cmp = compare_biases_zw(s, mom);
        REQUIRE(cmp.r < cmp.r_star);
        CHECK(cmp.verdict == ComparisonVerdict::por_dominates);
        CHECK(std::abs(bias_por_zw(s, mom)) < std::abs(bias_unadj(s, mom)));
    }
    SUBCASE("r between r* and 0: unadjusted dominates") {
        // small |theta_u1 mu_u1| against an opposite-sign second product
        LsemSpec s = zw_reference_spec(0.3, 1.0, 1.0, -0.05);
        s.gamma_au[0] = 0.0;
        const TreatmentMoments mom = quad60(s);
        const BiasComparison cmp = compare_biases_zw(s, mom);
        REQUIRE(cmp.r > cmp.r_star);
        REQUIRE(cmp.r < 0.0);
        CHECK(cmp.verdict == ComparisonVerdict::unadj_dominates);
        CHECK(std::abs(bias_por_zw(s, mom)) > std::abs(bias_unadj(s, mom)));
    }
    SUBCASE("pole at r = -min(S1, S2)") {
        LsemSpec s = zw_reference_spec();
        s.gamma_au[0] = 0.0;
        const TreatmentMoments mom = quad60(s);
        const SFactors sf = s_factors(mom);
        const double smin = std::min(sf.s1, sf.s2);
        // choose mu_u1 so that r = theta_u1 mu_u1 / (theta_u2 mu_u2) = -smin
        s.mu_u(0, 0) = -smin * s.theta_u(1, 0) * s.mu_u(1, 0) / s.theta_u(0, 0);
        const BiasComparison cmp = compare_biases_zw(s, mom);
        CHECK(cmp.verdict == ComparisonVerdict::pole);
    }
    SUBCASE("degenerate second product is rejected") {
        LsemSpec s = zw_reference_spec();
        s.gamma_au[0] = 0.0;
        s.mu_u(1, 0) = 0.0;
        CHECK_THROWS_AS(compare_biases_zw(s, quad60(s)), PreconditionError);
    }
}

TEST_CASE("bias report carries the setup tag and intermediates") {
    const LsemSpec zw = zw_reference_spec();
    const BiasReport rep = bias_report(zw, quad60(zw));
    CHECK(rep.setup == BiasSetup::zw_violation);
    CHECK(rep.intermediates.count("s1") == 1);
    CHECK(rep.intermediates.count("r_star") == 1);
    CHECK(rep.delta_or.has_value());
    CHECK(rep.delta_por == doctest::Approx(kZwRefPor).epsilon(1e-9));

    const LsemSpec ay = ay_reference_spec();
    const BiasReport rep_ay = bias_report(ay, quad60(ay));
    CHECK(rep_ay.setup == BiasSetup::ay_violation);
    CHECK(rep_ay.intermediates.count("r1") == 1);

    CounterRng rng(11);
    const LsemSpec gen = random_spec(SpecFamily::general, rng);
    const BiasReport rep_gen = bias_report(gen, quad60(gen));
    CHECK(rep_gen.setup == BiasSetup::general);
    CHECK(!rep_gen.delta_or.has_value());
    CHECK(rep_gen.intermediates.count("cond_B_mu") == 1);
}
