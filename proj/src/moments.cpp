#include "proxbias/moments.hpp"

#include "proxbias/rng.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace proxbias {

using nlohmann::json;

namespace {

double sigmoid(double s) {
    return s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

// Raw moment block over the whitened coordinates: S0 = E[sig], S1 = E[sig xi],
// S2 = E[sig xi xi'] restricted to the active directions.
struct WhitenedSums {
    double s0 = 0.0;
    Vec s1;
    Mat s2;
};

WhitenedSums tensor_quadrature(double alpha0, const Vec& coef, int order) {
    const int d = static_cast<int>(coef.size());
    const GaussHermiteRule rule = gauss_hermite(order);

    WhitenedSums out;
    out.s1 = Vec::Zero(d);
    out.s2 = Mat::Zero(d, d);
    if (d == 0) {
        out.s0 = sigmoid(alpha0);
        return out;
    }

    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    Vec x(d);
    while (true) {
        double wprod = 1.0;
        double s = alpha0;
        for (int k = 0; k < d; ++k) {
            x[k] = rule.nodes[idx[static_cast<std::size_t>(k)]];
            wprod *= rule.weights[idx[static_cast<std::size_t>(k)]];
            s += coef[k] * x[k];
        }
        const double f = wprod * sigmoid(s);
        out.s0 += f;
        out.s1 += f * x;
        out.s2 += f * x * x.transpose();

        int k = 0;
        while (k < d && ++idx[static_cast<std::size_t>(k)] == order) {
            idx[static_cast<std::size_t>(k)] = 0;
            ++k;
        }
        if (k == d) break;
    }
    return out;
}

// Full (p+q) whitened moments from the active-direction sums. Inactive
// directions are independent of the logistic argument, so E[sig xi_k] = 0 and
// E[sig xi_k xi_l] = delta_kl E[sig].
void assemble(const WhitenedSums& sums, const std::vector<int>& active, int dim, double& s0,
              Vec& m1, Mat& m2) {
    s0 = sums.s0;
    m1 = Vec::Zero(dim);
    m2 = Mat::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) m2(i, i) = sums.s0;
    for (std::size_t a = 0; a < active.size(); ++a) {
        m1[active[a]] = sums.s1[static_cast<Eigen::Index>(a)];
        for (std::size_t b = 0; b < active.size(); ++b)
            m2(active[a], active[b]) = sums.s2(static_cast<Eigen::Index>(a),
                                               static_cast<Eigen::Index>(b));
    }
}

TreatmentMoments from_joint_blocks(const LsemSpec& spec, double e_a, const Vec& e_av,
                                   const Mat& e_avv) {
    const int p = spec.dims.p, q = spec.dims.q;
    TreatmentMoments mom;
    mom.e_a = e_a;
    mom.e_au = e_av.head(p);
    mom.e_ax = e_av.tail(q);
    Mat sym = 0.5 * (e_avv + e_avv.transpose());
    mom.e_auu = sym.topLeftCorner(p, p);
    mom.e_aux = sym.topRightCorner(p, q);
    mom.e_axx = sym.bottomRightCorner(q, q);
    return mom;
}

double block_distance(const TreatmentMoments& a, const TreatmentMoments& b) {
    double d = std::abs(a.e_a - b.e_a);
    if (a.e_au.size()) d = std::max(d, (a.e_au - b.e_au).cwiseAbs().maxCoeff());
    if (a.e_ax.size()) d = std::max(d, (a.e_ax - b.e_ax).cwiseAbs().maxCoeff());
    if (a.e_auu.size()) d = std::max(d, (a.e_auu - b.e_auu).cwiseAbs().maxCoeff());
    if (a.e_aux.size()) d = std::max(d, (a.e_aux - b.e_aux).cwiseAbs().maxCoeff());
    if (a.e_axx.size()) d = std::max(d, (a.e_axx - b.e_axx).cwiseAbs().maxCoeff());
    return d;
}

TreatmentMoments quadrature_at_order(const LsemSpec& spec, const Mat& chol, int order) {
    const int p = spec.dims.p, q = spec.dims.q;
    Vec a(p + q);
    a.head(p) = spec.alpha_u;
    a.tail(q) = spec.alpha_x;
    const Vec coef_full = chol.transpose() * a;

    const double scale = coef_full.size() ? coef_full.cwiseAbs().maxCoeff() : 0.0;
    std::vector<int> active;
    for (int i = 0; i < p + q; ++i)
        if (std::abs(coef_full[i]) > 1e-13 * std::max(1.0, scale)) active.push_back(i);
    if (static_cast<int>(active.size()) > 3)
        throw PreconditionError(
            "logistic argument spans " + std::to_string(active.size()) +
            " effective Gaussian directions; quadrature handles at most 3, use "
            "treatment_moments_mc");

    Vec coef(static_cast<Eigen::Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k)
        coef[static_cast<Eigen::Index>(k)] = coef_full[active[k]];

    WhitenedSums sums = tensor_quadrature(spec.alpha0, coef, order);
    double s0 = 0.0;
    Vec m1;
    Mat m2;
    assemble(sums, active, p + q, s0, m1, m2);

    const Vec e_av = chol * m1;
    const Mat e_avv = chol * m2 * chol.transpose();
    TreatmentMoments mom = from_joint_blocks(spec, s0, e_av, e_avv);
    mom.method = MomentMethod::quadrature;
    return mom;
}

}  // namespace

GaussHermiteRule gauss_hermite(int order) {
    if (order < 1) throw PreconditionError("Gauss-Hermite order must be >= 1");
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
    // recurrence; off-diagonal entries sqrt(k).
    Mat jacobi = Mat::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        const double b = std::sqrt(static_cast<double>(k));
        jacobi(k, k - 1) = b;
        jacobi(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
    GaussHermiteRule rule;
    rule.nodes = es.eigenvalues();
    rule.weights = es.eigenvectors().row(0).transpose().cwiseAbs2();

    // Enforce exact +/- symmetry of the rule.
    const int half = order / 2;
    for (int i = 0; i < half; ++i) {
        const int j = order - 1 - i;
        const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if (order % 2 == 1) rule.nodes[half] = 0.0;
    return rule;
}

std::vector<std::string> check_moment_inequalities(const TreatmentMoments& mom) {
    std::vector<std::string> out;
    if (!(mom.e_a > 0.0 && mom.e_a < 1.0)) out.push_back("E[A] outside (0,1)");
    for (int i = 0; i < mom.p(); ++i) {
        const double eu = mom.e_au[i], euu = mom.e_auu(i, i);
        if (!(euu > 0.0 && euu < 1.0))
            out.push_back("E[AU" + std::to_string(i + 1) + "^2] outside (0,1)");
        if (mom.e_a * euu < eu * eu)
            out.push_back("E[A]E[AU" + std::to_string(i + 1) + "^2] < E[AU]^2");
        if ((1.0 - mom.e_a) * (1.0 - euu) < eu * eu)
            out.push_back("(1-E[A])(1-E[AU" + std::to_string(i + 1) + "^2]) < E[AU]^2");
    }
    if (mom.e_auu.size() && !mom.e_auu.isApprox(mom.e_auu.transpose(), 1e-10))
        out.push_back("E[AUU'] not symmetric");
    return out;
}

TreatmentMoments treatment_moments_quadrature(const LsemSpec& spec, int order) {
    require_valid(spec);
    if (order < 20) throw PreconditionError("quadrature order must be >= 20");
    const Mat chol = joint_cholesky(spec);

    TreatmentMoments fine = quadrature_at_order(spec, chol, order);
    TreatmentMoments coarse = quadrature_at_order(spec, chol, std::max(10, order / 2));
    fine.est_error = block_distance(fine, coarse) + 1e-14;
    return fine;
}

TreatmentMoments treatment_moments_mc(const LsemSpec& spec, Eigen::Index n, std::uint64_t seed) {
    require_valid(spec);
    if (n < 10000) throw PreconditionError("Monte Carlo moments need n >= 10^4");
    const int p = spec.dims.p, q = spec.dims.q;
    const int dim = p + q;

    RowSampler sampler(spec, seed);
    Vec u(p), x(q), v(dim);
    double a = 0.0;

    double count_a = 0.0;
    Vec sv = Vec::Zero(dim);
    Mat svv = Mat::Zero(dim, dim);
    Mat svv_sq = Mat::Zero(dim, dim);  // E[A (V_i V_j)^2] accumulator for SEs
    for (Eigen::Index i = 0; i < n; ++i) {
        sampler.draw_treatment(static_cast<std::uint64_t>(i), u, x, a);
        if (a == 0.0) continue;
        v.head(p) = u;
        v.tail(q) = x;
        count_a += 1.0;
        sv += v;
        Mat vv = v * v.transpose();
        svv += vv;
        svv_sq += vv.cwiseAbs2();
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    const double e_a = count_a * inv_n;
    const Vec e_av = sv * inv_n;
    const Mat e_avv = svv * inv_n;

    TreatmentMoments mom = from_joint_blocks(spec, e_a, e_av, e_avv);
    mom.method = MomentMethod::monte_carlo;

    // Worst-component plug-in standard error; A is binary so second moments
    // of every tracked statistic are already in the accumulators.
    double worst_var = e_a * (1.0 - e_a);
    for (int i = 0; i < dim; ++i)
        worst_var = std::max(worst_var, e_avv(i, i) - e_av[i] * e_av[i]);
    const Mat var_vv = svv_sq * inv_n - e_avv.cwiseAbs2();
    if (dim > 0) worst_var = std::max(worst_var, var_vv.maxCoeff());
    mom.est_error = 3.0 * std::sqrt(std::max(worst_var, 0.0) * inv_n);
    return mom;
}

SFactors s_factors(const TreatmentMoments& mom) {
    if (mom.p() < 1) throw PreconditionError("s_factors needs p >= 1");
    const double ea = mom.e_a, eu = mom.e_au[0], euu = mom.e_auu(0, 0);
    const double d1 = (1.0 - ea) * (1.0 - euu) - eu * eu;
    const double d2 = ea * euu - eu * eu;
    if (!(d1 > 0.0) || !(d2 > 0.0))
        throw PreconditionError(
            "corrupted treatment moments: S-factor denominators must be positive");
    return SFactors{(1.0 - ea) * (1.0 - ea) / d1, ea * ea / d2};
}

RFactors r_factors(const TreatmentMoments& mom) {
    if (mom.p() < 2) throw PreconditionError("r_factors needs p >= 2 (E[AU2])");
    const double ea = mom.e_a, eu1 = mom.e_au[0], eu2 = mom.e_au[1], euu = mom.e_auu(0, 0);
    const double d1 = (1.0 - ea) * (1.0 - euu) - eu1 * eu1;
    const double d2 = ea * euu - eu1 * eu1;
    if (d1 == 0.0 || d2 == 0.0)
        throw PreconditionError("corrupted treatment moments: R-factor denominator is zero");
    return RFactors{eu1 * eu2 / d1, (1.0 - ea - euu) / d2};
}

std::string to_json(const TreatmentMoments& mom, int indent) {
    json j;
    j["e_a"] = mom.e_a;
    j["e_au"] = std::vector<double>(mom.e_au.data(), mom.e_au.data() + mom.e_au.size());
    j["e_ax"] = std::vector<double>(mom.e_ax.data(), mom.e_ax.data() + mom.e_ax.size());
    auto mat_out = [](const Mat& m) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index jj = 0; jj < m.cols(); ++jj) row.push_back(m(i, jj));
            rows.push_back(row);
        }
        return rows;
    };
    j["e_auu"] = mat_out(mom.e_auu);
    j["e_aux"] = mat_out(mom.e_aux);
    j["e_axx"] = mat_out(mom.e_axx);
    j["method"] = mom.method == MomentMethod::quadrature ? "quadrature" : "monte-carlo";
    j["est_error"] = mom.est_error;
    return j.dump(indent);
}

TreatmentMoments moments_from_json(const std::string& text) {
    json j = json::parse(text);
    TreatmentMoments mom;
    mom.e_a = j.at("e_a").get<double>();
    auto vec_in = [](const json& a) {
        Vec v(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
        return v;
    };
    auto mat_in = [](const json& a) {
        const std::size_t r = a.size();
        const std::size_t c = r ? a[0].size() : 0;
        Mat m(r, c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t jj = 0; jj < c; ++jj)
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jj)) = a[i][jj].get<double>();
        return m;
    };
    mom.e_au = vec_in(j.at("e_au"));
    mom.e_ax = vec_in(j.at("e_ax"));
    mom.e_auu = mat_in(j.at("e_auu"));
    mom.e_aux = mat_in(j.at("e_aux"));
    mom.e_axx = mat_in(j.at("e_axx"));
    mom.method = j.at("method").get<std::string>() == "quadrature" ? MomentMethod::quadrature
                                                                   : MomentMethod::monte_carlo;
    mom.est_error = j.at("est_error").get<double>();
    return mom;
}

std::string moments_cache_key(const LsemSpec& spec, int order) {
    json j;
    j["alpha0"] = spec.alpha0;
    j["alpha_u"] = std::vector<double>(spec.alpha_u.data(), spec.alpha_u.data() + spec.alpha_u.size());
    j["alpha_x"] = std::vector<double>(spec.alpha_x.data(), spec.alpha_x.data() + spec.alpha_x.size());
    json rho = json::array(), sx = json::array();
    for (Eigen::Index i = 0; i < spec.rho.rows(); ++i)
        for (Eigen::Index jj = 0; jj < spec.rho.cols(); ++jj) rho.push_back(spec.rho(i, jj));
    for (Eigen::Index i = 0; i < spec.sigma_x.rows(); ++i)
        for (Eigen::Index jj = 0; jj < spec.sigma_x.cols(); ++jj) sx.push_back(spec.sigma_x(i, jj));
    j["rho"] = rho;
    j["sigma_x"] = sx;
    j["order"] = order;
    const std::string canon = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace proxbias
