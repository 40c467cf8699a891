#include "proxbias/completeness.hpp"
#include "proxbias/rng.hpp"
#include "proxbias/sweep.hpp"

#include <doctest.h>

#include <cmath>

using namespace proxbias;

namespace {

LsemSpec no_x_spec() {
    LsemSpec s = LsemSpec::zeros({2, 0, 1, 1});
    s.alpha0 = 0.2;
    s.alpha_u << 0.4, 0.3;
    s.theta0[0] = 0.1;
    s.theta_a[0] = 1.0;
    s.theta_u << 1.0, 0.7;
    s.mu_u << 0.5, 0.3;
    s.gamma_a = 0.5;
    s.gamma_u << 1.0, 0.5;
    return s;
}

}  // namespace

TEST_CASE("the witness vanishes at u2 = 0 and at the cubic root") {
    const CounterexampleG ce = make_counterexample(completeness_spec());
    Vec u(2);
    u << 1.3, 0.0;
    CHECK(g_value(ce, u, 0.5) == 0.0);

    const double ratio = ce.theta_u2 / ce.theta_u1;
    const double c2 = ce.alpha_u2 * ce.alpha_u2 + ce.alpha_u1 * ce.alpha_u1 * ratio * ratio -
                      2.0 * ce.alpha_u1 * ce.alpha_u2 * ratio;
    u << -0.4, std::sqrt(3.0 + c2);
    CHECK(std::abs(g_value(ce, u, 0.0)) < 1e-12);

    u << 0.7, 1.0;
    CHECK(std::abs(g_value(ce, u, 0.0)) > 1e-4);  // g is not identically zero
}

TEST_CASE("conditional means of the witness vanish on the certification grid") {
    const CompletenessCertificate cert = certify_completeness(completeness_spec(), 60);
    CHECK(cert.max_conditional < 1e-6);
    CHECK(cert.max_g > 1e-2);
    CHECK(cert.table.size() == 30);  // 5 z x 2 a x 3 x
}

TEST_CASE("the q = 0 reduction also certifies") {
    const CompletenessCertificate cert = certify_completeness(no_x_spec(), 60);
    CHECK(cert.max_conditional < 1e-6);
    CHECK(cert.max_g > 1e-2);
    CHECK(cert.table.size() == 10);  // 5 z x 2 a
}

TEST_CASE("theta_u2 = 0 degenerates gracefully") {
    LsemSpec s = no_x_spec();
    s.theta_u(1, 0) = 0.0;
    const CounterexampleG ce = make_counterexample(s);
    for (double z : {-1.0, 0.5})
        for (double a : {0.0, 1.0})
            CHECK(std::abs(conditional_mean_g(ce, z, a, 0.0, 60)) < 1e-6);
}

TEST_CASE("a swapped-loading spec is handled by index exchange") {
    LsemSpec s = no_x_spec();
    s.theta_u(0, 0) = 0.0;
    s.theta_u(1, 0) = 0.9;
    const CounterexampleG ce = make_counterexample(s);
    CHECK(ce.swapped);
    CHECK(std::abs(conditional_mean_g(ce, 0.7, 1.0, 0.0, 60)) < 1e-6);
}

TEST_CASE("a perturbed cubic constant is detected") {
    const CounterexampleG ce = make_counterexample(completeness_spec());
    double worst = 0.0;
    for (double z : {-2.0, -1.0, 0.0, 1.0, 2.0})
        for (double a : {0.0, 1.0})
            worst = std::max(worst, std::abs(conditional_mean_g(ce, z, a, 0.0, 60, 0.1)));
    CHECK(worst > 1e-3);
}

TEST_CASE("doubling the order moves the conditional mean by less than 1e-8") {
    const CounterexampleG ce = make_counterexample(completeness_spec());
    const double v40 = conditional_mean_g(ce, 1.0, 1.0, 0.5, 40);
    const double v80 = conditional_mean_g(ce, 1.0, 1.0, 0.5, 80);
    CHECK(std::abs(v40 - v80) < 1e-8);
}

TEST_CASE("counterexample capture enforces the shape") {
    LsemSpec bad = LsemSpec::zeros({1, 0, 1, 1});
    CHECK_THROWS_AS(make_counterexample(bad), PreconditionError);

    LsemSpec zero_theta = no_x_spec();
    zero_theta.theta_u.setZero();
    CHECK_THROWS_AS(make_counterexample(zero_theta), PreconditionError);
}

TEST_CASE("randomized specs certify as long as Z loads on U") {
    CounterRng rng(606);
    for (int i = 0; i < 4; ++i) {
        LsemSpec s = no_x_spec();
        s.alpha0 = -0.5 + rng.next_uniform();
        s.alpha_u[0] = -0.8 + 1.6 * rng.next_uniform();
        s.alpha_u[1] = -0.8 + 1.6 * rng.next_uniform();
        s.theta_u(0, 0) = 0.5 + rng.next_uniform();
        s.theta_u(1, 0) = -1.0 + 2.0 * rng.next_uniform();
        const CompletenessCertificate cert = certify_completeness(s, 60);
        CHECK(cert.max_conditional < 1e-6);
    }
}
