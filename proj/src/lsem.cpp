#include "proxbias/lsem.hpp"

#include "proxbias/rng.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>

#include <cmath>
#include <fstream>
#include <sstream>

namespace proxbias {

using nlohmann::json;

namespace {

// Counter window reserved per sampled row; generous for any dims we support.
constexpr std::uint64_t kRowStride = 256;

double sigmoid(double s) {
    return s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

json vec_to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Vec vec_from_json(const json& a, const char* name) {
    if (!a.is_array()) throw PreconditionError(std::string(name) + " must be an array");
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

Mat mat_from_json(const json& a, const char* name) {
    if (!a.is_array()) throw PreconditionError(std::string(name) + " must be an array of rows");
    const std::size_t rows = a.size();
    std::size_t cols = 0;
    if (rows > 0) {
        if (!a[0].is_array()) throw PreconditionError(std::string(name) + " rows must be arrays");
        cols = a[0].size();
    }
    Mat m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (a[i].size() != cols) throw PreconditionError(std::string(name) + " has ragged rows");
        for (std::size_t j = 0; j < cols; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
    }
    return m;
}

void check_shape(bool ok, std::vector<std::string>& out, const std::string& msg) {
    if (!ok) out.push_back(msg);
}

}  // namespace

LsemSpec LsemSpec::zeros(const Dimensions& d) {
    LsemSpec s;
    s.dims = d;
    s.alpha_u = Vec::Zero(d.p);
    s.alpha_x = Vec::Zero(d.q);
    s.theta0 = Vec::Zero(d.m);
    s.theta_a = Vec::Zero(d.m);
    s.theta_u = Mat::Zero(d.p, d.m);
    s.theta_x = Mat::Zero(d.q, d.m);
    s.mu0 = Vec::Zero(d.n);
    s.mu_u = Mat::Zero(d.p, d.n);
    s.mu_x = Mat::Zero(d.q, d.n);
    s.gamma_u = Vec::Zero(d.p);
    s.gamma_x = Vec::Zero(d.q);
    s.gamma_au = Vec::Zero(d.p);
    s.rho = Mat::Zero(d.p, d.q);
    s.sigma_x = Mat::Identity(d.q, d.q);
    return s;
}

std::vector<std::string> validate(const LsemSpec& spec) {
    std::vector<std::string> out;
    const auto& d = spec.dims;
    check_shape(d.p >= 1, out, "p must be >= 1");
    check_shape(d.m >= 1, out, "m must be >= 1");
    check_shape(d.n >= 1, out, "n must be >= 1");
    check_shape(d.q >= 0, out, "q must be >= 0");
    if (!out.empty()) return out;

    check_shape(spec.alpha_u.size() == d.p, out, "alpha_u length != p");
    check_shape(spec.alpha_x.size() == d.q, out, "alpha_x length != q");
    check_shape(spec.theta0.size() == d.m, out, "theta0 length != m");
    check_shape(spec.theta_a.size() == d.m, out, "theta_a length != m");
    check_shape(spec.theta_u.rows() == d.p && spec.theta_u.cols() == d.m, out, "theta_u is not p x m");
    check_shape(spec.theta_x.rows() == d.q && spec.theta_x.cols() == d.m, out, "theta_x is not q x m");
    check_shape(spec.mu0.size() == d.n, out, "mu0 length != n");
    check_shape(spec.mu_u.rows() == d.p && spec.mu_u.cols() == d.n, out, "mu_u is not p x n");
    check_shape(spec.mu_x.rows() == d.q && spec.mu_x.cols() == d.n, out, "mu_x is not q x n");
    check_shape(spec.gamma_u.size() == d.p, out, "gamma_u length != p");
    check_shape(spec.gamma_x.size() == d.q, out, "gamma_x length != q");
    check_shape(spec.gamma_au.size() == d.p, out, "gamma_au length != p");
    check_shape(spec.rho.rows() == d.p && spec.rho.cols() == d.q, out, "rho is not p x q");
    check_shape(spec.sigma_x.rows() == d.q && spec.sigma_x.cols() == d.q, out, "sigma_x is not q x q");
    if (!out.empty()) return out;

    if (spec.rho.size() > 0 && !(spec.rho.cwiseAbs().maxCoeff() < 1.0))
        out.push_back("rho entries must lie in (-1, 1)");
    if (d.q > 0) {
        if (!spec.sigma_x.isApprox(spec.sigma_x.transpose(), 1e-12))
            out.push_back("sigma_x must be symmetric");
        for (Eigen::Index j = 0; j < d.q; ++j)
            if (std::abs(spec.sigma_x(j, j) - 1.0) > 1e-12) {
                out.push_back("sigma_x must have unit diagonal");
                break;
            }
    }
    {
        Eigen::LLT<Mat> llt(joint_covariance(spec));
        if (llt.info() != Eigen::Success)
            out.push_back("joint (U,X) covariance is not positive definite");
    }
    for (double sd : spec.noise_sd)
        if (!(sd > 0.0)) {
            out.push_back("noise_sd components must be strictly positive");
            break;
        }
    return out;
}

void require_valid(const LsemSpec& spec) {
    auto violations = validate(spec);
    if (violations.empty()) return;
    std::string msg = "invalid LSEM spec:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw PreconditionError(msg);
}

double true_ace(const LsemSpec& spec) {
    return spec.gamma_a;
}

Mat joint_covariance(const LsemSpec& spec) {
    const int p = spec.dims.p, q = spec.dims.q;
    Mat c(p + q, p + q);
    c.topLeftCorner(p, p) = Mat::Identity(p, p);
    c.topRightCorner(p, q) = spec.rho;
    c.bottomLeftCorner(q, p) = spec.rho.transpose();
    c.bottomRightCorner(q, q) = spec.sigma_x;
    return c;
}

Mat joint_cholesky(const LsemSpec& spec) {
    Eigen::LLT<Mat> llt(joint_covariance(spec));
    if (llt.info() != Eigen::Success)
        throw PreconditionError("joint (U,X) covariance is not positive definite");
    return llt.matrixL();
}

RowSampler::RowSampler(const LsemSpec& spec, std::uint64_t seed)
    : spec_(spec),
      chol_(joint_cholesky(spec)),
      key_(CounterRng::derive(seed, 0x5a3c)),
      xi_(spec.dims.p + spec.dims.q),
      v_(spec.dims.p + spec.dims.q) {}

void RowSampler::draw_treatment(std::uint64_t row, Vec& u, Vec& x, double& a) {
    const int p = spec_.dims.p, q = spec_.dims.q;
    CounterRng rng(key_, row * kRowStride);
    for (int i = 0; i < p + q; ++i) xi_[i] = rng.next_normal();
    v_.noalias() = chol_ * xi_;
    u = v_.head(p);
    x = v_.tail(q);
    const double s = spec_.alpha0 + spec_.alpha_u.dot(u) + spec_.alpha_x.dot(x);
    a = rng.next_uniform() <= sigmoid(s) ? 1.0 : 0.0;
}

void RowSampler::draw_full(std::uint64_t row, Vec& u, Vec& x, double& a, Vec& z, Vec& w,
                           double& y) {
    const int p = spec_.dims.p, q = spec_.dims.q, m = spec_.dims.m, n = spec_.dims.n;
    CounterRng rng(key_, row * kRowStride);
    for (int i = 0; i < p + q; ++i) xi_[i] = rng.next_normal();
    v_.noalias() = chol_ * xi_;
    u = v_.head(p);
    x = v_.tail(q);
    const double s = spec_.alpha0 + spec_.alpha_u.dot(u) + spec_.alpha_x.dot(x);
    a = rng.next_uniform() <= sigmoid(s) ? 1.0 : 0.0;

    z = spec_.theta0;
    z.noalias() += spec_.theta_a * a;
    z.noalias() += spec_.theta_u.transpose() * u;
    z.noalias() += spec_.theta_x.transpose() * x;
    for (int j = 0; j < m; ++j) z[j] += spec_.noise_sd[0] * rng.next_normal();

    w = spec_.mu0;
    w.noalias() += spec_.mu_u.transpose() * u;
    w.noalias() += spec_.mu_x.transpose() * x;
    for (int j = 0; j < n; ++j) w[j] += spec_.noise_sd[1] * rng.next_normal();

    y = spec_.gamma0 + spec_.gamma_a * a + spec_.gamma_u.dot(u) + spec_.gamma_x.dot(x) +
        a * spec_.gamma_au.dot(u) + spec_.noise_sd[2] * rng.next_normal();
}

Dataset sample(const LsemSpec& spec, Eigen::Index n, std::uint64_t seed) {
    require_valid(spec);
    if (n < 1) throw PreconditionError("sample size must be >= 1");

    RowSampler sampler(spec, seed);
    Dataset d;
    d.a.resize(n);
    d.y.resize(n);
    d.z.resize(n, spec.dims.m);
    d.w.resize(n, spec.dims.n);
    d.x.resize(n, spec.dims.q);
    d.u.resize(n, spec.dims.p);

    Vec u(spec.dims.p), x(spec.dims.q), z(spec.dims.m), w(spec.dims.n);
    double a = 0.0, y = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        sampler.draw_full(static_cast<std::uint64_t>(i), u, x, a, z, w, y);
        d.a[i] = a;
        d.y[i] = y;
        d.z.row(i) = z.transpose();
        d.w.row(i) = w.transpose();
        d.x.row(i) = x.transpose();
        d.u.row(i) = u.transpose();
    }
    return d;
}

std::string to_json(const LsemSpec& spec, int indent) {
    json j;
    j["dims"] = {{"p", spec.dims.p}, {"q", spec.dims.q}, {"m", spec.dims.m}, {"n", spec.dims.n}};
    j["alpha0"] = spec.alpha0;
    j["alpha_u"] = vec_to_json(spec.alpha_u);
    j["alpha_x"] = vec_to_json(spec.alpha_x);
    j["theta0"] = vec_to_json(spec.theta0);
    j["theta_a"] = vec_to_json(spec.theta_a);
    j["theta_u"] = mat_to_json(spec.theta_u);
    j["theta_x"] = mat_to_json(spec.theta_x);
    j["mu0"] = vec_to_json(spec.mu0);
    j["mu_u"] = mat_to_json(spec.mu_u);
    j["mu_x"] = mat_to_json(spec.mu_x);
    j["gamma0"] = spec.gamma0;
    j["gamma_a"] = spec.gamma_a;
    j["gamma_u"] = vec_to_json(spec.gamma_u);
    j["gamma_x"] = vec_to_json(spec.gamma_x);
    j["gamma_au"] = vec_to_json(spec.gamma_au);
    j["rho"] = mat_to_json(spec.rho);
    j["sigma_x"] = mat_to_json(spec.sigma_x);
    j["noise_sd"] = {spec.noise_sd[0], spec.noise_sd[1], spec.noise_sd[2]};
    return j.dump(indent);
}

LsemSpec spec_from_json(const std::string& text) {
    json j = json::parse(text);

    LsemSpec s;
    s.alpha_u = vec_from_json(j.at("alpha_u"), "alpha_u");
    const int p = static_cast<int>(s.alpha_u.size());
    s.alpha_x = j.contains("alpha_x") ? vec_from_json(j["alpha_x"], "alpha_x") : Vec(0);
    const int q = static_cast<int>(s.alpha_x.size());
    s.theta0 = vec_from_json(j.at("theta0"), "theta0");
    const int m = static_cast<int>(s.theta0.size());
    s.mu0 = vec_from_json(j.at("mu0"), "mu0");
    const int n = static_cast<int>(s.mu0.size());
    s.dims = Dimensions{p, q, m, n};

    s.alpha0 = j.at("alpha0").get<double>();
    s.theta_a = vec_from_json(j.at("theta_a"), "theta_a");
    s.theta_u = mat_from_json(j.at("theta_u"), "theta_u");
    s.theta_x = j.contains("theta_x") ? mat_from_json(j["theta_x"], "theta_x") : Mat(0, m);
    s.mu_u = mat_from_json(j.at("mu_u"), "mu_u");
    s.mu_x = j.contains("mu_x") ? mat_from_json(j["mu_x"], "mu_x") : Mat(0, n);
    s.gamma0 = j.at("gamma0").get<double>();
    s.gamma_a = j.at("gamma_a").get<double>();
    s.gamma_u = vec_from_json(j.at("gamma_u"), "gamma_u");
    s.gamma_x = j.contains("gamma_x") ? vec_from_json(j["gamma_x"], "gamma_x") : Vec(0);
    s.gamma_au = j.contains("gamma_au") ? vec_from_json(j["gamma_au"], "gamma_au") : Vec::Zero(p);
    s.rho = j.contains("rho") ? mat_from_json(j["rho"], "rho") : Mat::Zero(p, q);
    s.sigma_x = j.contains("sigma_x") ? mat_from_json(j["sigma_x"], "sigma_x") : Mat::Identity(q, q);
    if (q == 0) {
        // empty blocks serialize without column structure; restore the shapes
        s.theta_x = Mat(0, m);
        s.mu_x = Mat(0, n);
        s.rho = Mat(p, 0);
        s.sigma_x = Mat(0, 0);
    }
    if (j.contains("noise_sd")) {
        auto arr = j["noise_sd"];
        if (!arr.is_array() || arr.size() != 3)
            throw PreconditionError("noise_sd must be a 3-element array");
        for (int k = 0; k < 3; ++k) s.noise_sd[static_cast<std::size_t>(k)] = arr[k].get<double>();
    }

    if (j.contains("dims")) {
        const auto& d = j["dims"];
        if (d.at("p").get<int>() != p || d.at("q").get<int>() != q ||
            d.at("m").get<int>() != m || d.at("n").get<int>() != n)
            throw PreconditionError("declared dims do not match inferred array lengths");
    }
    auto violations = validate(s);
    // Shape-level violations are serialization errors; value-level ones (PD,
    // noise) are left for the caller so that validate() remains observable.
    for (const auto& v : violations)
        if (v.find("length") != std::string::npos || v.find("is not") != std::string::npos)
            throw PreconditionError("inconsistent spec arrays: " + v);
    return s;
}

LsemSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open spec file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return spec_from_json(ss.str());
}

std::string spec_hash(const LsemSpec& spec) {
    const std::string canon = to_json(spec, -1);
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
