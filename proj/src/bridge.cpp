#include "proxbias/bridge.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>

namespace proxbias {

namespace {

void require_base_case(const LsemSpec& spec) {
    const auto& d = spec.dims;
    if (d.p != 1 || d.m != 1 || d.n != 1 || d.q > 1)
        throw PreconditionError("base-case bridge needs p = m = n = 1 and q <= 1");
}

}  // namespace

OutcomeBridgeParams solve_outcome_bridge_base(const LsemSpec& spec) {
    require_base_case(spec);
    const double mu_u = spec.mu_u(0, 0);
    if (mu_u == 0.0)
        throw PreconditionError("no outcome bridge: mu_u = 0 means W carries no signal about U");

    const double gu = spec.gamma_u[0], gau = spec.gamma_au[0], mu0 = spec.mu0[0];
    OutcomeBridgeParams b;
    b.b0 = spec.gamma0 - mu0 * gu / mu_u;
    b.b_a = spec.gamma_a - mu0 * gau / mu_u;
    b.b_w = Vec::Constant(1, gu / mu_u);
    b.b_aw = Vec::Constant(1, gau / mu_u);
    if (spec.dims.q == 1) {
        const double mux = spec.mu_x(0, 0);
        b.b_x = Vec::Constant(1, spec.gamma_x[0] - mux * gu / mu_u);
        b.b_ax = Vec::Constant(1, -mux * gau / mu_u);
    } else {
        b.b_x = Vec(0);
        b.b_ax = Vec(0);
    }
    return b;
}

TreatmentBridgeParams solve_treatment_bridge_base(const LsemSpec& spec) {
    require_base_case(spec);
    const double th_u = spec.theta_u(0, 0);
    if (th_u == 0.0)
        throw PreconditionError("no treatment bridge: theta_u = 0 means Z carries no signal about U");

    const double au = spec.alpha_u[0];
    const double var1 = spec.noise_sd[0] * spec.noise_sd[0];
    TreatmentBridgeParams t;
    t.t_z = -au / th_u;
    t.t0 = -spec.alpha0 + spec.theta0[0] / th_u * au + 0.5 * var1 * au * au / (th_u * th_u);
    t.t_a = -var1 * au * au / (th_u * th_u) + spec.theta_a[0] / th_u * au;
    t.t_x = spec.dims.q == 1 ? spec.theta_x(0, 0) / th_u * au - spec.alpha_x[0] : 0.0;
    return t;
}

double q_bridge_value(const TreatmentBridgeParams& t, double z, double a, double x) {
    const double sign = a > 0.5 ? 1.0 : -1.0;
    return 1.0 + std::exp(sign * (t.t0 + t.t_z * z + t.t_a * a + t.t_x * x));
}

double ace_from_bridge(const LsemSpec& spec, const OutcomeBridgeParams& bridge) {
    return bridge.b_a + bridge.b_aw.dot(spec.mu0);
}

std::vector<BridgeGridPoint> standard_bridge_grid(const LsemSpec& spec) {
    const int m = spec.dims.m, q = spec.dims.q;
    const double levels[5] = {-2.0, -1.0, 0.0, 1.0, 2.0};

    std::vector<BridgeGridPoint> grid;
    for (double zs : levels)
        for (int ai = 0; ai <= 1; ++ai) {
            if (q == 0) {
                BridgeGridPoint pt;
                pt.z = Vec::Constant(m, zs);
                pt.a = ai;
                pt.x = Vec(0);
                grid.push_back(pt);
            } else {
                for (double xs : levels) {
                    BridgeGridPoint pt;
                    pt.z = Vec::Constant(m, zs);
                    pt.a = ai;
                    pt.x = Vec::Constant(q, xs);
                    grid.push_back(pt);
                }
            }
        }
    return grid;
}

double fredholm_residual(const OutcomeBridgeParams& bridge, const LsemSpec& spec,
                         const std::vector<BridgeGridPoint>& grid) {
    require_valid(spec);
    if (grid.empty()) throw PreconditionError("fredholm_residual needs a nonempty grid");
    const int p = spec.dims.p, q = spec.dims.q, m = spec.dims.m;

    // U | X = x ~ N(rho sigma_x^-1 x, I - rho sigma_x^-1 rho'), then condition
    // on Z with A entering the Z mean as a known shift.
    Mat sxi_rho_t;  // sigma_x^-1 rho', q x p
    Mat s_ux;       // Var(U | X)
    if (q > 0) {
        Eigen::LLT<Mat> llt(spec.sigma_x);
        if (llt.info() != Eigen::Success)
            throw PreconditionError("spec defect: sigma_x is not positive definite");
        sxi_rho_t = llt.solve(spec.rho.transpose());
        s_ux = Mat::Identity(p, p) - spec.rho * sxi_rho_t;
    } else {
        sxi_rho_t = Mat(0, p);
        s_ux = Mat::Identity(p, p);
    }
    const double var1 = spec.noise_sd[0] * spec.noise_sd[0];
    const Mat cov_uz = s_ux * spec.theta_u;                                     // p x m
    const Mat var_z = spec.theta_u.transpose() * cov_uz + var1 * Mat::Identity(m, m);
    Eigen::LLT<Mat> var_z_llt(var_z);
    if (var_z_llt.info() != Eigen::Success)
        throw PreconditionError("spec defect: degenerate conditional covariance of Z");
    const Mat gain = var_z_llt.solve(cov_uz.transpose()).transpose();           // p x m

    // The grid carries z, x in conditional-SD units.
    Vec z_sd(m);
    for (int i = 0; i < m; ++i) z_sd[i] = std::sqrt(var_z(i, i));

    double worst = 0.0;
    for (const auto& pt : grid) {
        const Vec x = pt.x;  // unit marginal variance, so SD units are raw units
        const Vec mu_ux = q > 0 ? Vec(sxi_rho_t.transpose() * x) : Vec::Zero(p);
        const Vec ez = spec.theta0 + spec.theta_a * pt.a + spec.theta_u.transpose() * mu_ux +
                       spec.theta_x.transpose() * x;
        const Vec z = ez + pt.z.cwiseProduct(z_sd);
        const Vec u_mean = mu_ux + gain * (z - ez);

        const double lhs = spec.gamma0 + spec.gamma_a * pt.a + spec.gamma_x.dot(x) +
                           (spec.gamma_u + pt.a * spec.gamma_au).dot(u_mean);
        const Vec w_mean = spec.mu0 + spec.mu_x.transpose() * x + spec.mu_u.transpose() * u_mean;
        const double rhs = bridge.b0 + bridge.b_a * pt.a + bridge.b_x.dot(x) +
                           pt.a * bridge.b_ax.dot(x) +
                           (bridge.b_w + pt.a * bridge.b_aw).dot(w_mean);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

}  // namespace proxbias
