#include "proxbias/bias.hpp"

#include <json.hpp>

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>

namespace proxbias {

using nlohmann::json;

namespace {

constexpr double kPoleTol = 1e-6;

bool is_zero(const Vec& v) { return v.size() == 0 || v.cwiseAbs().maxCoeff() == 0.0; }

void require_2d_shape(const LsemSpec& spec, const char* what) {
    const auto& d = spec.dims;
    if (d.p != 2 || d.m != 1 || d.n != 1 || d.q != 0)
        throw PreconditionError(std::string(what) + " needs p = 2, m = n = 1, q = 0");
}

void require_zw_shape(const LsemSpec& spec, const char* what) {
    require_2d_shape(spec, what);
    if (spec.alpha_u[1] != 0.0 || spec.gamma_u[1] != 0.0)
        throw PreconditionError(std::string(what) +
                                " needs alpha_u2 = gamma_u2 = 0 (U2 links only Z and W)");
    if (spec.theta_u(0, 0) == 0.0)
        throw PreconditionError(std::string(what) + " needs theta_u1 != 0");
}

void require_ay_shape(const LsemSpec& spec, const char* what) {
    require_2d_shape(spec, what);
    if (spec.theta_u(1, 0) != 0.0 || spec.mu_u(1, 0) != 0.0)
        throw PreconditionError(std::string(what) +
                                " needs theta_u2 = mu_u2 = 0 (U2 links only A and Y)");
}

void check_pole(double denom, double scale, const char* which) {
    if (std::abs(denom) <= kPoleTol * std::max(1.0, scale))
        throw PoleError(std::string("proximal bias pole: denominator ") + which + " vanishes",
                        denom);
}

// Hand-assembled population normal equations for OLS of Y on
// (1, Z, W, A, AZ, AW) in the q = 0, m = n = 1 shapes; the second route
// (PopulationModel) rebuilds the same system from the generic basis Gram.
double ols_bias_2d(const LsemSpec& spec, const TreatmentMoments& mom) {
    const double ea = mom.e_a;
    const Vec& eu = mom.e_au;
    const Mat& euu = mom.e_auu;

    const double th0 = spec.theta0[0], tha = spec.theta_a[0], mu0 = spec.mu0[0];
    const Vec th = spec.theta_u.col(0);
    const Vec mu = spec.mu_u.col(0);
    const double g0 = spec.gamma0, ga = spec.gamma_a;
    const Vec& gu = spec.gamma_u;
    const Vec& gau = spec.gamma_au;
    const double var1 = spec.noise_sd[0] * spec.noise_sd[0];
    const double var2 = spec.noise_sd[1] * spec.noise_sd[1];

    const double e_z = th0 + tha * ea;
    const double e_w = mu0;
    const double e_az = (th0 + tha) * ea + th.dot(eu);
    const double e_aw = mu0 * ea + mu.dot(eu);
    const double e_zz = th0 * th0 + 2.0 * th0 * tha * ea + tha * tha * ea + th.squaredNorm() +
                        var1 + 2.0 * tha * th.dot(eu);
    const double e_zw = th0 * mu0 + tha * mu0 * ea + tha * mu.dot(eu) + th.dot(mu);
    const double e_ww = mu0 * mu0 + mu.squaredNorm() + var2;
    const double e_azz = (th0 + tha) * (th0 + tha) * ea + th.dot(euu * th) + var1 * ea +
                         2.0 * (th0 + tha) * th.dot(eu);
    const double e_azw = (th0 + tha) * mu0 * ea + (th0 + tha) * mu.dot(eu) + mu0 * th.dot(eu) +
                         th.dot(euu * mu);
    const double e_aww = mu0 * mu0 * ea + 2.0 * mu0 * mu.dot(eu) + mu.dot(euu * mu) + var2 * ea;

    const double e_y = g0 + ga * ea + gau.dot(eu);
    const double e_zy = th0 * g0 + (th0 * ga + tha * g0 + tha * ga) * ea + th.dot(gu) +
                        (th0 * gau + tha * gu + tha * gau + ga * th).dot(eu) + th.dot(euu * gau);
    const double e_wy = mu0 * g0 + mu0 * ga * ea + (mu0 * gau + ga * mu).dot(eu) + mu.dot(gu) +
                        mu.dot(euu * gau);
    const double e_ay = (g0 + ga) * ea + (gu + gau).dot(eu);
    const double e_azy = (th0 + tha) * (g0 + ga) * ea +
                         ((th0 + tha) * (gu + gau) + (g0 + ga) * th).dot(eu) +
                         th.dot(euu * (gu + gau));
    const double e_awy = mu0 * (g0 + ga) * ea + (mu0 * (gu + gau) + (g0 + ga) * mu).dot(eu) +
                         mu.dot(euu * (gu + gau));

    Mat gram(6, 6);
    gram << 1.0,   e_z,   e_w,   ea,    e_az,  e_aw,
            e_z,   e_zz,  e_zw,  e_az,  e_azz, e_azw,
            e_w,   e_zw,  e_ww,  e_aw,  e_azw, e_aww,
            ea,    e_az,  e_aw,  ea,    e_az,  e_aw,
            e_az,  e_azz, e_azw, e_az,  e_azz, e_azw,
            e_aw,  e_azw, e_aww, e_aw,  e_azw, e_aww;
    Vec rhs(6);
    rhs << e_y, e_zy, e_wy, e_ay, e_azy, e_awy;

    Eigen::JacobiSVD<Mat> svd(gram);
    const double cond = svd.singularValues()[0] / svd.singularValues()[5];
    if (!(cond < 1e10))
        throw SingularSystemError("population OLS design matrix is singular", cond);
    Vec b = Eigen::FullPivLU<Mat>(gram).solve(rhs);

    const double psi = b[3] + b[4] * e_z + b[5] * e_w;
    return psi - spec.gamma_a;
}

}  // namespace

BiasSetup classify_setup(const LsemSpec& spec) {
    const auto& d = spec.dims;
    if (d.p == 2 && d.m == 1 && d.n == 1 && d.q == 0) {
        if (spec.alpha_u[1] == 0.0 && spec.gamma_u[1] == 0.0) return BiasSetup::zw_violation;
        if (spec.theta_u(1, 0) == 0.0 && spec.mu_u(1, 0) == 0.0) return BiasSetup::ay_violation;
    }
    if (is_zero(spec.gamma_au) && d.m == d.n) return BiasSetup::general;
    throw PreconditionError(
        "spec matches no closed-form bias family (need a ZW or AY violation shape, or "
        "gamma_au = 0 with dim(Z) = dim(W))");
}

std::string setup_name(BiasSetup s) {
    switch (s) {
        case BiasSetup::zw_violation: return "zw-violation";
        case BiasSetup::ay_violation: return "ay-violation";
        default: return "general";
    }
}

double bias_por_zw(const LsemSpec& spec, const TreatmentMoments& mom) {
    require_zw_shape(spec, "bias_por_zw");
    const SFactors s = s_factors(mom);
    const double ea = mom.e_a, eu1 = mom.e_au[0];
    const double th1 = spec.theta_u(0, 0), th2 = spec.theta_u(1, 0);
    const double mu1 = spec.mu_u(0, 0), mu2 = spec.mu_u(1, 0);
    const double t = th2 / th1 * mu2;

    const double d1 = mu1 + s.s1 * t;
    const double d2 = mu1 + s.s2 * t;
    check_pole(d1, std::max(std::abs(mu1), std::abs(s.s1 * t)), "mu_u1 + S1 (theta_u2/theta_u1) mu_u2");
    check_pole(d2, std::max(std::abs(mu1), std::abs(s.s2 * t)), "mu_u1 + S2 (theta_u2/theta_u1) mu_u2");

    const double prefix = eu1 / (ea * (1.0 - ea)) * t;
    const double term_au = (1.0 - ea) * s.s2 / d2 * spec.gamma_au[0];
    const double term_u = (ea * s.s1 / d1 + (1.0 - ea) * s.s2 / d2) * spec.gamma_u[0];
    return prefix * (term_au + term_u);
}

double bias_or_zw(const LsemSpec& spec, const TreatmentMoments& mom) {
    require_zw_shape(spec, "bias_or_zw");
    return ols_bias_2d(spec, mom);
}

double bias_or_ay(const LsemSpec& spec, const TreatmentMoments& mom) {
    require_ay_shape(spec, "bias_or_ay");
    return ols_bias_2d(spec, mom);
}

double bias_unadj(const LsemSpec& spec, const TreatmentMoments& mom) {
    const double ea = mom.e_a;
    if (!(ea > 0.0 && ea < 1.0))
        throw PreconditionError("bias_unadj needs E[A] strictly inside (0,1)");
    double delta = spec.gamma_u.dot(mom.e_au) / (ea * (1.0 - ea));
    delta += spec.gamma_au.dot(mom.e_au) / ea;
    if (spec.dims.q > 0) delta += spec.gamma_x.dot(mom.e_ax) / (ea * (1.0 - ea));
    return delta;
}

// Exact solve of the four moment conditions E[(Y - h)(1, A, Z, AZ)'] = 0 in
// this shape. With c_a = gamma_a - b_a - b_aw mu_0 the system reduces to
//   c_a D + c_au E = -gamma_u2 E[AU2],   c_a E + c_au F = -gamma_u2 E[AU1U2]
// where D = E[A](1-E[A]) - E[AU1]^2, E = E[AU1](1 - E[AU1^2] - E[A]),
// F = E[AU1^2](1-E[AU1^2]) - E[AU1]^2, and the bias is -c_a. The identity
// D F - E^2 = f1 f2 with f1 = E[A]E[AU1^2] - E[AU1]^2 and
// f2 = (1-E[A])(1-E[AU1^2]) - E[AU1]^2 gives the closed form below.
double bias_por_ay(const LsemSpec& spec, const TreatmentMoments& mom) {
    require_ay_shape(spec, "bias_por_ay");
    const double ea = mom.e_a, eu1 = mom.e_au[0], eu2 = mom.e_au[1];
    const double euu = mom.e_auu(0, 0), cross = mom.e_auu(0, 1);
    const double f1 = ea * euu - eu1 * eu1;
    const double f2 = (1.0 - ea) * (1.0 - euu) - eu1 * eu1;
    if (!(f1 > 0.0) || !(f2 > 0.0))
        throw PreconditionError("corrupted treatment moments: AY bias denominators must be positive");
    const double big_f = euu * (1.0 - euu) - eu1 * eu1;
    const double big_e = eu1 * (1.0 - euu - ea);
    return (eu2 * big_f - cross * big_e) / (f1 * f2) * spec.gamma_u[1];
}

namespace {

struct GeneralBiasParts {
    double delta = 0.0;
    double cond_cross = 0.0;  // condition number of B'mu_u
};

GeneralBiasParts general_bias_parts(const LsemSpec& spec, const TreatmentMoments& mom) {
    require_valid(spec);
    if (!is_zero(spec.gamma_au))
        throw PreconditionError("bias_general needs gamma_au = 0 (no effect modification)");
    const int p = spec.dims.p, q = spec.dims.q, m = spec.dims.m, n = spec.dims.n;
    if (m != n) throw PreconditionError("bias_general needs dim(Z) = dim(W)");

    Vec beta_num;   // numerator of beta, as a column
    Mat center;     // the p x p matrix multiplying theta_u in B
    double denom = mom.e_a * (1.0 - mom.e_a);
    if (q > 0) {
        Eigen::FullPivLU<Mat> sx(spec.sigma_x);
        const Mat sxi_rho_t = sx.solve(spec.rho.transpose());  // q x p
        const Vec sxi_eax = sx.solve(mom.e_ax);                // q
        denom -= mom.e_ax.dot(sxi_eax);
        if (!(denom > 0.0))
            throw PreconditionError(
                "corrupted treatment moments: E[A](1-E[A]) - E[AX]'Sx^-1 E[AX] <= 0");
        beta_num = mom.e_au - sxi_rho_t.transpose() * mom.e_ax;
        center = Mat::Identity(p, p) - spec.rho * sxi_rho_t -
                 (mom.e_au - spec.rho * sxi_eax) * beta_num.transpose() / denom;
    } else {
        beta_num = mom.e_au;
        center = Mat::Identity(p, p) - mom.e_au * mom.e_au.transpose() / denom;
    }

    const Mat b_mat = center * spec.theta_u;          // p x m
    const Mat cross = b_mat.transpose() * spec.mu_u;  // m x n

    Mat proj;  // mu_u (B'mu_u)^-1 B'
    Eigen::JacobiSVD<Mat> svd(cross, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double smax = svd.singularValues()[0];
    const double smin = svd.singularValues()[svd.singularValues().size() - 1];
    GeneralBiasParts parts;
    parts.cond_cross = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (p >= m) {
        if (!(parts.cond_cross < 1e8))
            throw SingularSystemError("B'mu_u is singular in the general bias formula",
                                      parts.cond_cross);
        proj = spec.mu_u * Eigen::FullPivLU<Mat>(cross).solve(b_mat.transpose());
    } else {
        // p < m: Moore-Penrose inverse of B'mu_u.
        Vec inv_sv = svd.singularValues();
        for (Eigen::Index i = 0; i < inv_sv.size(); ++i)
            inv_sv[i] = inv_sv[i] > smax * 1e-12 ? 1.0 / inv_sv[i] : 0.0;
        const Mat pinv = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
        proj = spec.mu_u * pinv * b_mat.transpose();
    }
    const Vec shifted = (Mat::Identity(p, p) - proj) * spec.gamma_u;
    parts.delta = beta_num.dot(shifted) / denom;
    return parts;
}

}  // namespace

double bias_general(const LsemSpec& spec, const TreatmentMoments& mom) {
    return general_bias_parts(spec, mom).delta;
}

double por_unadj_ratio(const TreatmentMoments& mom, double r) {
    const SFactors s = s_factors(mom);
    return std::abs(mom.e_a * s.s1 / (r + s.s1) + (1.0 - mom.e_a) * s.s2 / (r + s.s2));
}

BiasComparison compare_biases_zw(const LsemSpec& spec, const TreatmentMoments& mom) {
    require_zw_shape(spec, "compare_biases_zw");
    if (spec.gamma_au[0] != 0.0)
        throw PreconditionError("compare_biases_zw applies to the gamma_au1 = 0 case");

    const double t1 = spec.theta_u(0, 0) * spec.mu_u(0, 0);
    const double t2 = spec.theta_u(1, 0) * spec.mu_u(1, 0);
    if (t2 == 0.0)
        throw PreconditionError(
            "degenerate comparison: theta_u2 mu_u2 = 0 makes the proximal estimator unbiased");

    const SFactors s = s_factors(mom);
    BiasComparison cmp;
    cmp.s1 = s.s1;
    cmp.s2 = s.s2;
    cmp.r = t1 / t2;
    cmp.r_star = -s.s1 * (1.0 - mom.e_a) - s.s2 * mom.e_a;

    // |delta_POR / delta_unadj| = |f(r)| with
    // f(r) = E[A] S1/(r+S1) + (1-E[A]) S2/(r+S2); the proximal bias has poles
    // where a denominator vanishes, i.e. at r = -S1 and r = -S2.  Same-sign
    // products (r > 0) put f strictly inside (0,1); on the opposite-sign side
    // the verdict is read off the ratio itself.  f(r*) = 1 at
    // r* = -S1(1-E[A]) - S2 E[A], but f also crosses -1, so the magnitude
    // comparison is not a single threshold in r when S1 != S2.
    if (std::abs(cmp.r + s.s1) <= kPoleTol * std::max(1.0, s.s1) ||
        std::abs(cmp.r + s.s2) <= kPoleTol * std::max(1.0, s.s2)) {
        cmp.verdict = ComparisonVerdict::pole;
    } else if (cmp.r > 0.0 || por_unadj_ratio(mom, cmp.r) < 1.0) {
        cmp.verdict = ComparisonVerdict::por_dominates;
    } else {
        cmp.verdict = ComparisonVerdict::unadj_dominates;
    }
    return cmp;
}

BiasReport bias_report(const LsemSpec& spec, const TreatmentMoments& mom) {
    BiasReport rep;
    rep.setup = classify_setup(spec);
    rep.delta_unadj = bias_unadj(spec, mom);
    switch (rep.setup) {
        case BiasSetup::zw_violation: {
            rep.delta_por = bias_por_zw(spec, mom);
            rep.delta_or = bias_or_zw(spec, mom);
            const SFactors s = s_factors(mom);
            rep.intermediates["s1"] = s.s1;
            rep.intermediates["s2"] = s.s2;
            const double t2 = spec.theta_u(1, 0) * spec.mu_u(1, 0);
            if (t2 != 0.0) {
                rep.intermediates["r"] = spec.theta_u(0, 0) * spec.mu_u(0, 0) / t2;
                rep.intermediates["r_star"] = -s.s1 * (1.0 - mom.e_a) - s.s2 * mom.e_a;
            }
            break;
        }
        case BiasSetup::ay_violation: {
            rep.delta_por = bias_por_ay(spec, mom);
            rep.delta_or = bias_or_ay(spec, mom);
            const RFactors r = r_factors(mom);
            rep.intermediates["r1"] = r.r1;
            rep.intermediates["r2"] = r.r2;
            break;
        }
        case BiasSetup::general: {
            const GeneralBiasParts parts = general_bias_parts(spec, mom);
            rep.delta_por = parts.delta;
            rep.intermediates["cond_B_mu"] = parts.cond_cross;
            break;
        }
    }
    return rep;
}

std::string to_json(const BiasReport& report, int indent) {
    json j;
    j["setup"] = setup_name(report.setup);
    j["delta_por"] = report.delta_por;
    if (report.delta_or) j["delta_or"] = *report.delta_or;
    j["delta_unadj"] = report.delta_unadj;
    json inter = json::object();
    for (const auto& [k, v] : report.intermediates) inter[k] = v;
    j["intermediates"] = inter;
    return j.dump(indent);
}

}  // namespace proxbias
