#include "proxbias/estimators.hpp"

#include <json.hpp>

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>

namespace proxbias {

using nlohmann::json;

namespace {

double condition_number(const Mat& m) {
    Eigen::JacobiSVD<Mat> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[sv.size() - 1] <= 0.0) return std::numeric_limits<double>::infinity();
    return sv[0] / sv[sv.size() - 1];
}

Vec solve_checked(const Mat& m, const Vec& rhs, const char* what, double cond_limit = 1e10) {
    const double cond = condition_number(m);
    if (!(cond < cond_limit)) throw SingularSystemError(what, cond);
    return Eigen::FullPivLU<Mat>(m).solve(rhs);
}

}  // namespace

std::string to_json_row(const FitResult& fit, const std::string& estimator) {
    json j;
    j["estimator"] = estimator;
    j["psi_hat"] = fit.psi_hat;
    j["se_psi"] = fit.se_psi;
    j["n"] = fit.n;
    json coefs = json::object();
    for (std::size_t i = 0; i < fit.coef_names.size(); ++i)
        coefs[fit.coef_names[i]] = fit.bridge_hat[static_cast<Eigen::Index>(i)];
    j["coefficients"] = coefs;
    return j.dump();
}

PopulationModel::PopulationModel(const LsemSpec& spec, const TreatmentMoments& mom)
    : spec_(spec), p_(spec.dims.p), q_(spec.dims.q), m_(spec.dims.m), n_(spec.dims.n) {
    const int noise = m_ + n_ + 1;
    basis_size_ = 2 + 2 * p_ + 2 * q_ + 2 * noise;
    gram_ = Mat::Zero(basis_size_, basis_size_);

    const double ea = mom.e_a;
    auto set = [this](int i, int j, double v) {
        gram_(i, j) = v;
        gram_(j, i) = v;
    };

    set(idx_one(), idx_one(), 1.0);
    set(idx_one(), idx_a(), ea);
    set(idx_a(), idx_a(), ea);
    for (int i = 0; i < p_; ++i) {
        set(idx_one(), idx_au(i), mom.e_au[i]);
        set(idx_a(), idx_u(i), mom.e_au[i]);
        set(idx_a(), idx_au(i), mom.e_au[i]);
        for (int j = 0; j < p_; ++j) {
            set(idx_u(i), idx_u(j), i == j ? 1.0 : 0.0);
            set(idx_u(i), idx_au(j), mom.e_auu(i, j));
            set(idx_au(i), idx_au(j), mom.e_auu(i, j));
        }
        for (int k = 0; k < q_; ++k) {
            set(idx_u(i), idx_x(k), spec.rho(i, k));
            set(idx_u(i), idx_ax(k), mom.e_aux(i, k));
            set(idx_au(i), idx_x(k), mom.e_aux(i, k));
            set(idx_au(i), idx_ax(k), mom.e_aux(i, k));
        }
    }
    for (int k = 0; k < q_; ++k) {
        set(idx_one(), idx_ax(k), mom.e_ax[k]);
        set(idx_a(), idx_x(k), mom.e_ax[k]);
        set(idx_a(), idx_ax(k), mom.e_ax[k]);
        for (int l = 0; l < q_; ++l) {
            set(idx_x(k), idx_x(l), spec.sigma_x(k, l));
            set(idx_x(k), idx_ax(l), mom.e_axx(k, l));
            set(idx_ax(k), idx_ax(l), mom.e_axx(k, l));
        }
    }
    auto noise_sd_of = [&](int c) {
        if (c < m_) return spec.noise_sd[0];
        if (c < m_ + n_) return spec.noise_sd[1];
        return spec.noise_sd[2];
    };
    for (int c = 0; c < noise; ++c) {
        const double var = noise_sd_of(c) * noise_sd_of(c);
        set(idx_eps(c), idx_eps(c), var);
        set(idx_eps(c), idx_aeps(c), var * ea);
        set(idx_aeps(c), idx_aeps(c), var * ea);
    }
}

PopulationModel::Var PopulationModel::one() const {
    Var v = Vec::Zero(basis_size_);
    v[idx_one()] = 1.0;
    return v;
}

PopulationModel::Var PopulationModel::treat() const {
    Var v = Vec::Zero(basis_size_);
    v[idx_a()] = 1.0;
    return v;
}

PopulationModel::Var PopulationModel::z(int i) const {
    Var v = Vec::Zero(basis_size_);
    v[idx_one()] = spec_.theta0[i];
    v[idx_a()] = spec_.theta_a[i];
    for (int k = 0; k < p_; ++k) v[idx_u(k)] = spec_.theta_u(k, i);
    for (int k = 0; k < q_; ++k) v[idx_x(k)] = spec_.theta_x(k, i);
    v[idx_eps(i)] = 1.0;
    return v;
}

PopulationModel::Var PopulationModel::w(int j) const {
    Var v = Vec::Zero(basis_size_);
    v[idx_one()] = spec_.mu0[j];
    for (int k = 0; k < p_; ++k) v[idx_u(k)] = spec_.mu_u(k, j);
    for (int k = 0; k < q_; ++k) v[idx_x(k)] = spec_.mu_x(k, j);
    v[idx_eps(m_ + j)] = 1.0;
    return v;
}

PopulationModel::Var PopulationModel::x(int k) const {
    Var v = Vec::Zero(basis_size_);
    v[idx_x(k)] = 1.0;
    return v;
}

PopulationModel::Var PopulationModel::y() const {
    Var v = Vec::Zero(basis_size_);
    v[idx_one()] = spec_.gamma0;
    v[idx_a()] = spec_.gamma_a;
    for (int k = 0; k < p_; ++k) v[idx_u(k)] = spec_.gamma_u[k];
    for (int k = 0; k < q_; ++k) v[idx_x(k)] = spec_.gamma_x[k];
    for (int k = 0; k < p_; ++k) v[idx_au(k)] = spec_.gamma_au[k];
    v[idx_eps(m_ + n_)] = 1.0;
    return v;
}

PopulationModel::Var PopulationModel::times_a(const Var& v) const {
    Var out = Vec::Zero(basis_size_);
    out[idx_a()] = v[idx_one()] + v[idx_a()];
    for (int i = 0; i < p_; ++i) out[idx_au(i)] = v[idx_u(i)] + v[idx_au(i)];
    for (int k = 0; k < q_; ++k) out[idx_ax(k)] = v[idx_x(k)] + v[idx_ax(k)];
    for (int c = 0; c < m_ + n_ + 1; ++c) out[idx_aeps(c)] = v[idx_eps(c)] + v[idx_aeps(c)];
    return out;
}

namespace {

struct FeatureSet {
    std::vector<PopulationModel::Var> vars;
    std::vector<std::string> names;
    void add(const PopulationModel::Var& v, const std::string& name) {
        vars.push_back(v);
        names.push_back(name);
    }
};

FeatureSet bridge_features(const PopulationModel& model, const LsemSpec& spec, BridgeForm form) {
    FeatureSet h;
    h.add(model.one(), "b0");
    h.add(model.treat(), "b_a");
    for (int j = 0; j < spec.dims.n; ++j) h.add(model.w(j), "b_w" + std::to_string(j + 1));
    for (int k = 0; k < spec.dims.q; ++k) h.add(model.x(k), "b_x" + std::to_string(k + 1));
    if (form == BridgeForm::interacted) {
        for (int k = 0; k < spec.dims.q; ++k)
            h.add(model.times_a(model.x(k)), "b_ax" + std::to_string(k + 1));
        for (int j = 0; j < spec.dims.n; ++j)
            h.add(model.times_a(model.w(j)), "b_aw" + std::to_string(j + 1));
    }
    return h;
}

FeatureSet gmm_instruments(const PopulationModel& model, const LsemSpec& spec, BridgeForm form) {
    FeatureSet q;
    q.add(model.one(), "1");
    q.add(model.treat(), "A");
    for (int i = 0; i < spec.dims.m; ++i) q.add(model.z(i), "Z" + std::to_string(i + 1));
    for (int k = 0; k < spec.dims.q; ++k) q.add(model.x(k), "X" + std::to_string(k + 1));
    if (form == BridgeForm::interacted) {
        for (int i = 0; i < spec.dims.m; ++i)
            q.add(model.times_a(model.z(i)), "AZ" + std::to_string(i + 1));
        for (int k = 0; k < spec.dims.q; ++k)
            q.add(model.times_a(model.x(k)), "AX" + std::to_string(k + 1));
    }
    return q;
}

}  // namespace

PopulationFit population_gmm(const LsemSpec& spec, const TreatmentMoments& mom, BridgeForm form) {
    if (spec.dims.m != spec.dims.n)
        throw PreconditionError("population GMM needs dim(Z) = dim(W) for exact identification");
    PopulationModel model(spec, mom);
    FeatureSet h = bridge_features(model, spec, form);
    FeatureSet q = gmm_instruments(model, spec, form);

    const int k = static_cast<int>(h.vars.size());
    Mat sys(k, k);
    Vec rhs(k);
    for (int i = 0; i < k; ++i) {
        rhs[i] = model.product(q.vars[static_cast<std::size_t>(i)], model.y());
        for (int j = 0; j < k; ++j)
            sys(i, j) = model.product(q.vars[static_cast<std::size_t>(i)],
                                      h.vars[static_cast<std::size_t>(j)]);
    }
    PopulationFit fit;
    fit.condition = condition_number(sys);
    fit.coefficients = solve_checked(sys, rhs, "population GMM system is singular");
    fit.coef_names = h.names;

    // psi = b_a + b_aw'E[W] + b_ax'E[X], with E[W] = mu0 and E[X] = 0.
    fit.psi = fit.coefficients[1];
    if (form == BridgeForm::interacted) {
        const int aw_base = 2 + spec.dims.n + 2 * spec.dims.q;
        for (int j = 0; j < spec.dims.n; ++j)
            fit.psi += fit.coefficients[aw_base + j] * spec.mu0[j];
    }
    fit.bias = fit.psi - spec.gamma_a;
    return fit;
}

PopulationFit population_ols(const LsemSpec& spec, const TreatmentMoments& mom) {
    PopulationModel model(spec, mom);
    FeatureSet d;
    d.add(model.one(), "1");
    for (int i = 0; i < spec.dims.m; ++i) d.add(model.z(i), "Z" + std::to_string(i + 1));
    for (int j = 0; j < spec.dims.n; ++j) d.add(model.w(j), "W" + std::to_string(j + 1));
    d.add(model.treat(), "A");
    for (int i = 0; i < spec.dims.m; ++i)
        d.add(model.times_a(model.z(i)), "AZ" + std::to_string(i + 1));
    for (int j = 0; j < spec.dims.n; ++j)
        d.add(model.times_a(model.w(j)), "AW" + std::to_string(j + 1));
    for (int k = 0; k < spec.dims.q; ++k) d.add(model.x(k), "X" + std::to_string(k + 1));
    for (int k = 0; k < spec.dims.q; ++k)
        d.add(model.times_a(model.x(k)), "AX" + std::to_string(k + 1));

    const int k = static_cast<int>(d.vars.size());
    Mat gram(k, k);
    Vec rhs(k);
    for (int i = 0; i < k; ++i) {
        rhs[i] = model.product(d.vars[static_cast<std::size_t>(i)], model.y());
        for (int j = i; j < k; ++j) {
            gram(i, j) = model.product(d.vars[static_cast<std::size_t>(i)],
                                       d.vars[static_cast<std::size_t>(j)]);
            gram(j, i) = gram(i, j);
        }
    }
    PopulationFit fit;
    fit.condition = condition_number(gram);
    fit.coefficients = solve_checked(gram, rhs, "population OLS design is singular");
    fit.coef_names = d.names;

    // Standardization at the covariate means: psi = b_A + b_AZ'E[Z] + b_AW'E[W].
    const int m = spec.dims.m, n = spec.dims.n;
    fit.psi = fit.coefficients[1 + m + n];
    for (int i = 0; i < m; ++i)
        fit.psi += fit.coefficients[2 + m + n + i] * (spec.theta0[i] + spec.theta_a[i] * mom.e_a);
    for (int j = 0; j < n; ++j) fit.psi += fit.coefficients[2 + 2 * m + n + j] * spec.mu0[j];
    fit.bias = fit.psi - spec.gamma_a;
    return fit;
}

PopulationFit population_unadjusted(const LsemSpec& spec, const TreatmentMoments& mom) {
    PopulationModel model(spec, mom);
    const double ea = mom.e_a;
    if (!(ea > 0.0 && ea < 1.0))
        throw PreconditionError("unadjusted limit needs E[A] strictly inside (0,1)");
    const double e_ay = model.product(model.treat(), model.y());
    const double e_y = model.product(model.one(), model.y());
    PopulationFit fit;
    fit.psi = e_ay / ea - (e_y - e_ay) / (1.0 - ea);
    fit.bias = fit.psi - spec.gamma_a;
    fit.condition = 1.0;
    return fit;
}

namespace {

// Sample design builders mirroring the population feature sets.
Mat sample_bridge_features(const ObservedData& d, BridgeForm form, std::vector<std::string>* names) {
    const Eigen::Index N = d.rows();
    const Eigen::Index n = d.w.cols(), q = d.x.cols();
    const Eigen::Index k =
        form == BridgeForm::interacted ? 2 + 2 * n + 2 * q : 2 + n + q;
    Mat h(N, k);
    Eigen::Index c = 0;
    h.col(c++).setOnes();
    h.col(c++) = d.a;
    if (names) {
        names->clear();
        names->push_back("b0");
        names->push_back("b_a");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        h.col(c++) = d.w.col(j);
        if (names) names->push_back("b_w" + std::to_string(j + 1));
    }
    for (Eigen::Index j = 0; j < q; ++j) {
        h.col(c++) = d.x.col(j);
        if (names) names->push_back("b_x" + std::to_string(j + 1));
    }
    if (form == BridgeForm::interacted) {
        for (Eigen::Index j = 0; j < q; ++j) {
            h.col(c++) = d.a.cwiseProduct(d.x.col(j));
            if (names) names->push_back("b_ax" + std::to_string(j + 1));
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            h.col(c++) = d.a.cwiseProduct(d.w.col(j));
            if (names) names->push_back("b_aw" + std::to_string(j + 1));
        }
    }
    return h;
}

Mat sample_instruments(const ObservedData& d, BridgeForm form) {
    const Eigen::Index N = d.rows();
    const Eigen::Index m = d.z.cols(), q = d.x.cols();
    const Eigen::Index k =
        form == BridgeForm::interacted ? 2 + 2 * m + 2 * q : 2 + m + q;
    Mat qs(N, k);
    Eigen::Index c = 0;
    qs.col(c++).setOnes();
    qs.col(c++) = d.a;
    for (Eigen::Index j = 0; j < m; ++j) qs.col(c++) = d.z.col(j);
    for (Eigen::Index j = 0; j < q; ++j) qs.col(c++) = d.x.col(j);
    if (form == BridgeForm::interacted) {
        for (Eigen::Index j = 0; j < m; ++j) qs.col(c++) = d.a.cwiseProduct(d.z.col(j));
        for (Eigen::Index j = 0; j < q; ++j) qs.col(c++) = d.a.cwiseProduct(d.x.col(j));
    }
    return qs;
}

}  // namespace

FitResult fit_proximal_gmm(const ObservedData& data, BridgeForm form) {
    const Eigen::Index N = data.rows();
    if (data.z.cols() != data.w.cols())
        throw PreconditionError("proximal GMM needs dim(Z) = dim(W) for exact identification");

    FitResult fit;
    Mat h = sample_bridge_features(data, form, &fit.coef_names);
    Mat qs = sample_instruments(data, form);
    const Eigen::Index k = h.cols();
    if (N <= k) throw PreconditionError("need more observations than bridge parameters");

    const double inv_n = 1.0 / static_cast<double>(N);
    Mat sys = (qs.transpose() * h) * inv_n;
    Vec rhs = (qs.transpose() * data.y) * inv_n;
    const double cond = condition_number(sys);
    if (!(cond < 1e10))
        throw SingularSystemError("proximal GMM identification failure", cond);
    Vec b = Eigen::FullPivLU<Mat>(sys).solve(rhs);

    // psi_hat = E_n[h(W,1,X) - h(W,0,X)] = b_a + b_ax' xbar + b_aw' wbar.
    const Eigen::Index n = data.w.cols(), q = data.x.cols();
    Vec grad = Vec::Zero(k);  // d psi / d b
    grad[1] = 1.0;
    if (form == BridgeForm::interacted) {
        for (Eigen::Index j = 0; j < q; ++j) grad[2 + n + q + j] = data.x.col(j).mean();
        for (Eigen::Index j = 0; j < n; ++j) grad[2 + n + 2 * q + j] = data.w.col(j).mean();
    }
    const double psi = grad.dot(b);

    // Sandwich variance of the stacked moment system (b block plus the psi
    // restriction row).
    Vec resid = data.y - h * b;
    Mat a_mat = Mat::Zero(k + 1, k + 1);
    a_mat.topLeftCorner(k, k) = -sys;
    a_mat(k, k) = 1.0;
    a_mat.row(k).head(k) = -grad.transpose();
    Mat omega = Mat::Zero(k + 1, k + 1);
    Vec gi(k + 1);
    for (Eigen::Index i = 0; i < N; ++i) {
        gi.head(k) = qs.row(i).transpose() * resid[i];
        double psi_i = b[1];
        if (form == BridgeForm::interacted) {
            for (Eigen::Index j = 0; j < q; ++j) psi_i += b[2 + n + q + j] * data.x(i, j);
            for (Eigen::Index j = 0; j < n; ++j) psi_i += b[2 + n + 2 * q + j] * data.w(i, j);
        }
        gi[k] = psi - psi_i;
        omega.noalias() += gi * gi.transpose();
    }
    omega *= inv_n;
    Mat a_inv = Eigen::FullPivLU<Mat>(a_mat).inverse();
    Mat v = a_inv * omega * a_inv.transpose() * inv_n;

    fit.psi_hat = psi;
    fit.bridge_hat = b;
    fit.n = N;
    fit.se_psi = std::sqrt(std::max(v(k, k), 0.0));
    return fit;
}

FitResult fit_or(const ObservedData& data) {
    const Eigen::Index N = data.rows();
    const Eigen::Index m = data.z.cols(), n = data.w.cols(), q = data.x.cols();
    const Eigen::Index k = 2 + 2 * m + 2 * n + 2 * q;
    if (N <= k) throw PreconditionError("need more observations than regression features");

    FitResult fit;
    Mat d(N, k);
    Eigen::Index c = 0;
    d.col(c++).setOnes();
    fit.coef_names.push_back("1");
    for (Eigen::Index j = 0; j < m; ++j) {
        d.col(c++) = data.z.col(j);
        fit.coef_names.push_back("Z" + std::to_string(j + 1));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        d.col(c++) = data.w.col(j);
        fit.coef_names.push_back("W" + std::to_string(j + 1));
    }
    d.col(c++) = data.a;
    fit.coef_names.push_back("A");
    for (Eigen::Index j = 0; j < m; ++j) {
        d.col(c++) = data.a.cwiseProduct(data.z.col(j));
        fit.coef_names.push_back("AZ" + std::to_string(j + 1));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        d.col(c++) = data.a.cwiseProduct(data.w.col(j));
        fit.coef_names.push_back("AW" + std::to_string(j + 1));
    }
    for (Eigen::Index j = 0; j < q; ++j) {
        d.col(c++) = data.x.col(j);
        fit.coef_names.push_back("X" + std::to_string(j + 1));
    }
    for (Eigen::Index j = 0; j < q; ++j) {
        d.col(c++) = data.a.cwiseProduct(data.x.col(j));
        fit.coef_names.push_back("AX" + std::to_string(j + 1));
    }

    const double inv_n = 1.0 / static_cast<double>(N);
    Mat gram = (d.transpose() * d) * inv_n;
    const double cond = condition_number(gram);
    if (!(cond < 1e10)) throw SingularSystemError("OLS design is rank deficient", cond);
    Vec rhs = (d.transpose() * data.y) * inv_n;
    Vec b = Eigen::FullPivLU<Mat>(gram).solve(rhs);

    // g-formula standardization: contrast of fitted values at A = 1 vs A = 0,
    // averaged over the empirical (Z, W, X) distribution.
    Vec contrast = Vec::Zero(k);
    contrast[1 + m + n] = 1.0;
    for (Eigen::Index j = 0; j < m; ++j) contrast[2 + m + n + j] = data.z.col(j).mean();
    for (Eigen::Index j = 0; j < n; ++j) contrast[2 + 2 * m + n + j] = data.w.col(j).mean();
    for (Eigen::Index j = 0; j < q; ++j) contrast[2 + 2 * m + 2 * n + q + j] = data.x.col(j).mean();

    Vec resid = data.y - d * b;
    Mat meat = Mat::Zero(k, k);
    for (Eigen::Index i = 0; i < N; ++i)
        meat.noalias() += resid[i] * resid[i] * d.row(i).transpose() * d.row(i);
    meat *= inv_n;
    Mat gram_inv = Eigen::FullPivLU<Mat>(gram).inverse();
    Mat vb = gram_inv * meat * gram_inv * inv_n;

    fit.psi_hat = contrast.dot(b);
    fit.bridge_hat = b;
    fit.n = N;
    fit.se_psi = std::sqrt(std::max(contrast.dot(vb * contrast), 0.0));
    return fit;
}

FitResult fit_unadj(const ObservedData& data) {
    const Eigen::Index N = data.rows();
    double n1 = 0.0, n0 = 0.0, s1 = 0.0, s0 = 0.0, ss1 = 0.0, ss0 = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
        if (data.a[i] > 0.5) {
            n1 += 1.0;
            s1 += data.y[i];
            ss1 += data.y[i] * data.y[i];
        } else {
            n0 += 1.0;
            s0 += data.y[i];
            ss0 += data.y[i] * data.y[i];
        }
    }
    if (n1 < 2.0 || n0 < 2.0)
        throw PreconditionError("both treatment arms must contain at least two observations");
    const double m1 = s1 / n1, m0 = s0 / n0;
    const double v1 = (ss1 - n1 * m1 * m1) / (n1 - 1.0);
    const double v0 = (ss0 - n0 * m0 * m0) / (n0 - 1.0);

    FitResult fit;
    fit.psi_hat = m1 - m0;
    fit.bridge_hat = Vec::Zero(2);
    fit.bridge_hat << m0, m1;
    fit.coef_names = {"mean_y_a0", "mean_y_a1"};
    fit.n = N;
    fit.se_psi = std::sqrt(v1 / n1 + v0 / n0);
    return fit;
}

}  // namespace proxbias
