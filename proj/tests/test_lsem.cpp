#include "proxbias/bias.hpp"
#include "proxbias/estimators.hpp"
#include "proxbias/lsem.hpp"
#include "proxbias/moments.hpp"
#include "proxbias/rng.hpp"
#include "proxbias/sweep.hpp"

#include <doctest.h>

#include <cmath>

using namespace proxbias;

namespace {

LsemSpec simple_zw() { return zw_reference_spec(); }

}  // namespace

TEST_CASE("validate accepts identity-covariance specs") {
    LsemSpec s = LsemSpec::zeros({2, 1, 1, 1});
    CHECK(validate(s).empty());
}

TEST_CASE("validate rejects a correlation layout breaking positive definiteness") {
    // rho1 = rho2 = 0.8 with unit-variance X: 1 - 0.64 - 0.64 < 0.
    LsemSpec s = LsemSpec::zeros({2, 1, 1, 1});
    s.rho(0, 0) = 0.8;
    s.rho(1, 0) = 0.8;
    auto violations = validate(s);
    REQUIRE(!violations.empty());
    bool found = false;
    for (const auto& v : violations)
        if (v.find("positive definite") != std::string::npos) found = true;
    CHECK(found);
}

TEST_CASE("validate rejects zero noise") {
    LsemSpec s = LsemSpec::zeros({1, 0, 1, 1});
    s.noise_sd[2] = 0.0;
    auto violations = validate(s);
    REQUIRE(!violations.empty());
}

TEST_CASE("true ACE is gamma_a regardless of the interaction") {
    LsemSpec s = LsemSpec::zeros({2, 0, 1, 1});
    s.gamma_a = 0.5;
    s.gamma_au[0] = 3.0;
    CHECK(true_ace(s) == 0.5);
    s.gamma_a = 0.0;
    CHECK(true_ace(s) == 0.0);
}

TEST_CASE("sampling is deterministic in (spec, n, seed)") {
    const LsemSpec s = simple_zw();
    Dataset d1 = sample(s, 500, 42);
    Dataset d2 = sample(s, 500, 42);
    CHECK(d1.a == d2.a);
    CHECK(d1.y == d2.y);
    CHECK(d1.z == d2.z);
    CHECK(d1.w == d2.w);
    CHECK(d1.u == d2.u);
    Dataset d3 = sample(s, 500, 43);
    CHECK(d1.y != d3.y);
}

TEST_CASE("symmetric logistic with no covariate effect gives E[A] near 1/2") {
    LsemSpec s = LsemSpec::zeros({1, 0, 1, 1});
    Dataset d = sample(s, 1000000, 7);
    CHECK(std::abs(d.a.mean() - 0.5) < 0.002);
}

TEST_CASE("difference in means recovers gamma_a without confounding") {
    LsemSpec s = LsemSpec::zeros({1, 0, 1, 1});
    s.alpha_u[0] = 0.8;   // treatment depends on U
    s.gamma_a = 0.7;      // but Y does not
    s.theta_u(0, 0) = 1.0;
    s.mu_u(0, 0) = 1.0;
    Dataset d = sample(s, 400000, 11);
    double n1 = 0, n0 = 0, s1 = 0, s0 = 0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        if (d.a[i] > 0.5) {
            n1 += 1;
            s1 += d.y[i];
        } else {
            n0 += 1;
            s0 += d.y[i];
        }
    }
    const double diff = s1 / n1 - s0 / n0;
    const double se = std::sqrt(1.0 / n1 + 1.0 / n0);
    CHECK(std::abs(diff - 0.7) < 3.0 * se);
}

TEST_CASE("sample moments of (A, AU1) match quadrature moments") {
    const LsemSpec s = simple_zw();
    const TreatmentMoments quad = treatment_moments_quadrature(s, 60);
    Dataset d = sample(s, 1000000, 3);
    const double ea_hat = d.a.mean();
    const double eau_hat = (d.a.array() * d.u.col(0).array()).mean();
    const double se_a = std::sqrt(quad.e_a * (1 - quad.e_a) / d.rows());
    const double var_au = quad.e_auu(0, 0) - quad.e_au[0] * quad.e_au[0];
    const double se_au = std::sqrt(var_au / d.rows());
    CHECK(std::abs(ea_hat - quad.e_a) < 3.0 * se_a);
    CHECK(std::abs(eau_hat - quad.e_au[0]) < 3.0 * se_au);
}

TEST_CASE("sample moment error decays roughly as n^(-1/2)") {
    const LsemSpec s = simple_zw();
    const TreatmentMoments quad = treatment_moments_quadrature(s, 60);
    double err_small = 0.0, err_large = 0.0;
    const int reps = 8;
    for (int r = 0; r < reps; ++r) {
        Dataset d1 = sample(s, 2000, 100 + r);
        Dataset d2 = sample(s, 200000, 200 + r);
        err_small += std::abs((d1.a.array() * d1.u.col(0).array()).mean() - quad.e_au[0]);
        err_large += std::abs((d2.a.array() * d2.u.col(0).array()).mean() - quad.e_au[0]);
    }
    // 100x more data should shrink the average error by about 10; allow slack.
    CHECK(err_large < err_small / 3.0);
}

TEST_CASE("sign symmetry: negating one U component's couplings flips nothing observable") {
    LsemSpec s = simple_zw();
    s.gamma_u[1] = 0.0;
    LsemSpec flipped = s;
    flipped.alpha_u[1] = -flipped.alpha_u[1];
    flipped.theta_u(1, 0) = -flipped.theta_u(1, 0);
    flipped.mu_u(1, 0) = -flipped.mu_u(1, 0);
    flipped.gamma_u[1] = -flipped.gamma_u[1];
    flipped.gamma_au[1] = -flipped.gamma_au[1];

    const TreatmentMoments m1 = treatment_moments_quadrature(s, 60);
    const TreatmentMoments m2 = treatment_moments_quadrature(flipped, 60);
    CHECK(std::abs(m1.e_a - m2.e_a) < 1e-12);
    CHECK(std::abs(m1.e_au[0] - m2.e_au[0]) < 1e-12);
    CHECK(std::abs(m1.e_au[1] + m2.e_au[1]) < 1e-12);

    // every closed-form bias is unchanged
    CHECK(std::abs(bias_por_zw(s, m1) - bias_por_zw(flipped, m2)) < 1e-12);
    CHECK(std::abs(bias_or_zw(s, m1) - bias_or_zw(flipped, m2)) < 1e-12);
    CHECK(std::abs(bias_unadj(s, m1) - bias_unadj(flipped, m2)) < 1e-12);

    // sampled fits agree within Monte Carlo error
    Dataset d1 = sample(s, 200000, 5);
    Dataset d2 = sample(flipped, 200000, 6);
    const FitResult f1 = fit_proximal_gmm(ObservedData(d1));
    const FitResult f2 = fit_proximal_gmm(ObservedData(d2));
    CHECK(std::abs(f1.psi_hat - f2.psi_hat) < 3.0 * std::hypot(f1.se_psi, f2.se_psi));
}

TEST_CASE("JSON round trip preserves the spec and its hash") {
    const LsemSpec s = base_case_spec();
    const std::string text = to_json(s);
    const LsemSpec back = spec_from_json(text);
    CHECK(spec_hash(back) == spec_hash(s));
    CHECK(back.alpha_u[0] == s.alpha_u[0]);
    CHECK(back.rho(0, 0) == s.rho(0, 0));
    CHECK(back.noise_sd[2] == s.noise_sd[2]);
}

TEST_CASE("JSON with mismatched declared dims is rejected") {
    const LsemSpec s = base_case_spec();
    std::string text = to_json(s);
    const auto pos = text.find("\"p\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 6, "\"p\": 2");
    CHECK_THROWS_AS(spec_from_json(text), PreconditionError);
}

TEST_CASE("counter rng streams are reproducible and split cleanly") {
    CounterRng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    const std::uint64_t child1 = CounterRng::derive(123, 1);
    const std::uint64_t child2 = CounterRng::derive(123, 2);
    CHECK(child1 != child2);
}
