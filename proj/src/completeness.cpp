#include "proxbias/completeness.hpp"

#include "proxbias/moments.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>

namespace proxbias {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Unnormalized Gaussian exp(-u'Pu/2 + l'u + k) split into the normalized
// density N(m, P^-1) and a log prefactor.
struct GaussianPart {
    Vec mean;
    Mat chol_cov;   // lower Cholesky of P^-1
    double log_pref = 0.0;  // log integral of the Gaussian factor alone
};

GaussianPart gaussian_part(const Mat& precision, const Vec& linear, double constant) {
    Eigen::LLT<Mat> llt(precision);
    if (llt.info() != Eigen::Success)
        throw PreconditionError("counterexample integrand has a degenerate Gaussian part");
    GaussianPart g;
    g.mean = llt.solve(linear);
    const Mat cov = llt.solve(Mat::Identity(precision.rows(), precision.cols()));
    Eigen::LLT<Mat> cov_llt(cov);
    g.chol_cov = cov_llt.matrixL();
    double log_det_cov = 0.0;
    for (Eigen::Index i = 0; i < cov.rows(); ++i) log_det_cov += 2.0 * std::log(g.chol_cov(i, i));
    const double d = static_cast<double>(precision.rows());
    g.log_pref = constant + 0.5 * linear.dot(g.mean) + 0.5 * d * std::log(kTwoPi) +
                 0.5 * log_det_cov;
    return g;
}

template <typename F>
double gh_expect_2d(const GaussianPart& g, int order, F&& f) {
    const GaussHermiteRule rule = gauss_hermite(order);
    double acc = 0.0;
    Vec xi(2), u(2);
    for (int i = 0; i < order; ++i) {
        for (int j = 0; j < order; ++j) {
            xi[0] = rule.nodes[i];
            xi[1] = rule.nodes[j];
            u = g.mean + g.chol_cov * xi;
            acc += rule.weights[i] * rule.weights[j] * f(u);
        }
    }
    return acc;
}

}  // namespace

CounterexampleG make_counterexample(const LsemSpec& spec) {
    require_valid(spec);
    const auto& d = spec.dims;
    if (d.p != 2 || d.m != 1 || d.q > 1)
        throw PreconditionError("completeness counterexample needs p = 2, m = 1, q <= 1");

    CounterexampleG ce;
    ce.swapped = spec.theta_u(0, 0) == 0.0 && spec.theta_u(1, 0) != 0.0;
    const int i1 = ce.swapped ? 1 : 0, i2 = ce.swapped ? 0 : 1;
    ce.alpha0 = spec.alpha0;
    ce.alpha_u1 = spec.alpha_u[i1];
    ce.alpha_u2 = spec.alpha_u[i2];
    ce.theta0 = spec.theta0[0];
    ce.theta_a = spec.theta_a[0];
    ce.theta_u1 = spec.theta_u(i1, 0);
    ce.theta_u2 = spec.theta_u(i2, 0);
    ce.sigma1 = spec.noise_sd[0];
    ce.has_x = d.q == 1;
    if (ce.has_x) {
        ce.alpha_x = spec.alpha_x[0];
        ce.theta_x = spec.theta_x(0, 0);
        ce.rho1 = spec.rho(i1, 0);
        ce.rho2 = spec.rho(i2, 0);
    }
    if (ce.theta_u1 == 0.0)
        throw PreconditionError("counterexample needs a nonzero Z loading on some U component");
    return ce;
}

double g_value(const CounterexampleG& ce, const Vec& u, double x) {
    if (u.size() != 2) throw PreconditionError("g is a function of a 2-dimensional U");
    const double u1 = ce.swapped ? u[1] : u[0];
    const double u2 = ce.swapped ? u[0] : u[1];

    const double ratio = ce.theta_u2 / ce.theta_u1;
    const double cubic = u2 * (u2 * u2 - 3.0 - ce.alpha_u2 * ce.alpha_u2 -
                               ce.alpha_u1 * ce.alpha_u1 * ratio * ratio +
                               2.0 * ce.alpha_u1 * ce.alpha_u2 * ratio);

    double density_exponent;  // matches the U | X conditional density shape
    if (ce.has_x) {
        const double det = 1.0 - ce.rho1 * ce.rho1 - ce.rho2 * ce.rho2;
        const double cross = ce.rho2 * u1 - ce.rho1 * u2;
        const double d2 = u2 - ce.rho2 * x;
        const double d1 = u1 - ce.rho1 * x;
        density_exponent = (cross * cross - d2 * d2 - d1 * d1) / (2.0 * det);
    } else {
        density_exponent = -(u1 * u1 + u2 * u2) / 2.0;
    }

    const double s = ce.alpha0 + ce.alpha_x * x + ce.alpha_u1 * u1 + ce.alpha_u2 * u2;
    const double cosh_factor = 2.0 + std::exp(-s) + std::exp(s);
    return cubic * std::exp(-0.5 * u2 * u2) * std::exp(-density_exponent) * cosh_factor;
}

double conditional_mean_g(const CounterexampleG& ce, double z, double a, double x, int order,
                          double cubic_shift) {
    if (order < 40) throw PreconditionError("conditional_mean_g needs quadrature order >= 40");
    if (!(a == 0.0 || a == 1.0)) throw PreconditionError("a must be 0 or 1");

    // Everything below works in the (u1, u2) coordinates of the captured
    // counterexample (possibly swapped); the conditional law is symmetric
    // under the same relabeling.
    const double var1 = ce.sigma1 * ce.sigma1;
    const double z_tilde = z - ce.theta0 - ce.theta_a * a - ce.theta_x * x;
    Vec theta(2);
    theta << ce.theta_u1, ce.theta_u2;

    const double sign = a > 0.5 ? 1.0 : -1.0;  // (-1)^(1-a)
    auto logistic_arg = [&](const Vec& u) {
        return ce.alpha0 + ce.alpha_x * x + ce.alpha_u1 * u[0] + ce.alpha_u2 * u[1];
    };

    // Numerator: the U|X shape inside g cancels the conditional prior exactly
    // and (2 + e^-s + e^s) P[A=a|u,x] = 1 + e^{(-1)^(1-a) s}, leaving
    //   K u2 (u2^2 - 3 - c^2) e^{-u2^2/2} (1 + e^{sign s}) phi_sigma(z~ - theta'u).
    const double det_rho = 1.0 - ce.rho1 * ce.rho1 - ce.rho2 * ce.rho2;
    const double log_k = ce.has_x ? -std::log(kTwoPi * std::sqrt(det_rho)) : -std::log(kTwoPi);
    const double ratio = ce.theta_u2 / ce.theta_u1;
    const double c2 = ce.alpha_u2 * ce.alpha_u2 + ce.alpha_u1 * ce.alpha_u1 * ratio * ratio -
                      2.0 * ce.alpha_u1 * ce.alpha_u2 * ratio + cubic_shift;

    const Mat like_prec = theta * theta.transpose() / var1;  // from the Z likelihood
    Mat prec_num = like_prec;
    prec_num(1, 1) += 1.0;  // the e^{-u2^2/2} factor of g
    const Vec lin_num = theta * (z_tilde / var1);
    const double const_num = -0.5 * z_tilde * z_tilde / var1 -
                             0.5 * std::log(kTwoPi) - std::log(ce.sigma1) + log_k;
    const GaussianPart num_part = gaussian_part(prec_num, lin_num, const_num);
    auto num_residual = [&](const Vec& u) {
        const double u2 = u[1];
        return u2 * (u2 * u2 - 3.0 - c2) * (1.0 + std::exp(sign * logistic_arg(u)));
    };

    // Denominator: full conditional prior times Z likelihood times the
    // logistic treatment probability.
    Mat prior_cov = Mat::Identity(2, 2);
    Vec prior_mean = Vec::Zero(2);
    if (ce.has_x) {
        Vec rho(2);
        rho << ce.rho1, ce.rho2;
        prior_cov -= rho * rho.transpose();
        prior_mean = rho * x;
    }
    const Eigen::LLT<Mat> prior_llt(prior_cov);
    if (prior_llt.info() != Eigen::Success)
        throw PreconditionError("degenerate U | X covariance in the counterexample spec");
    const Mat prior_prec = prior_llt.solve(Mat::Identity(2, 2));
    double log_det_prior = 0.0;
    {
        const Mat l = prior_llt.matrixL();
        log_det_prior = 2.0 * (std::log(l(0, 0)) + std::log(l(1, 1)));
    }
    const Mat prec_den = prior_prec + like_prec;
    const Vec lin_den = prior_prec * prior_mean + lin_num;
    const double const_den = -0.5 * prior_mean.dot(prior_prec * prior_mean) -
                             0.5 * z_tilde * z_tilde / var1 - std::log(kTwoPi) -
                             0.5 * log_det_prior - 0.5 * std::log(kTwoPi) - std::log(ce.sigma1);
    const GaussianPart den_part = gaussian_part(prec_den, lin_den, const_den);
    auto den_residual = [&](const Vec& u) {
        const double arg = a > 0.5 ? -logistic_arg(u) : logistic_arg(u);
        return 1.0 / (1.0 + std::exp(arg));
    };

    // Self-normalization convergence check at half order.
    const double norm_full = gh_expect_2d(den_part, order, den_residual);
    const double norm_half = gh_expect_2d(den_part, std::max(20, order / 2), den_residual);
    if (!(std::abs(norm_full - norm_half) <= 1e-6 * std::abs(norm_full)))
        throw PreconditionError("conditional-density normalization has not converged; "
                                "raise the quadrature order");

    const double num = gh_expect_2d(num_part, order, num_residual);
    return std::exp(num_part.log_pref - den_part.log_pref) * num / norm_full;
}

CompletenessCertificate certify_completeness(const LsemSpec& spec, int order) {
    const CounterexampleG ce = make_counterexample(spec);
    CompletenessCertificate cert;

    const std::vector<double> z_levels = {-2.0, -1.0, 0.0, 1.0, 2.0};
    const std::vector<double> x_levels =
        ce.has_x ? std::vector<double>{-1.0, 0.0, 1.0} : std::vector<double>{0.0};
    for (double z : z_levels)
        for (int a = 0; a <= 1; ++a)
            for (double x : x_levels) {
                CompletenessPoint pt;
                pt.z = z;
                pt.a = a;
                pt.x = x;
                pt.value = conditional_mean_g(ce, z, a, x, order);
                cert.max_conditional = std::max(cert.max_conditional, std::abs(pt.value));
                cert.table.push_back(pt);
            }

    Vec u(2);
    for (double u1 = -1.0; u1 <= 1.0; u1 += 0.5)
        for (double u2 = -1.0; u2 <= 1.0; u2 += 0.5)
            for (double x : x_levels) {
                u << u1, u2;
                cert.max_g = std::max(cert.max_g, std::abs(g_value(ce, u, x)));
            }
    return cert;
}

}  // namespace proxbias
