#pragma once

#include "proxbias/types.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace proxbias {

// (dim(U), dim(X), dim(Z), dim(W)) = (p, q, m, n)
struct Dimensions {
    int p = 1;  // unobserved confounders U
    int q = 0;  // observed confounders X
    int m = 1;  // negative control exposures Z
    int n = 1;  // negative control outcomes W
};

// Linear structural equation model:
//   (U, X) ~ N(0, [[I_p, rho], [rho^T, sigma_x]])
//   logit P(A=1|U,X) = alpha0 + alpha_u'U + alpha_x'X
//   Z = theta0 + theta_a A + theta_u'U + theta_x'X + eps1
//   W = mu0 + mu_u'U + mu_x'X + eps2
//   Y(a) = gamma0 + gamma_a a + gamma_u'U + gamma_x'X + gamma_au'(aU) + eps3
struct LsemSpec {
    Dimensions dims;

    double alpha0 = 0.0;
    Vec alpha_u;  // p
    Vec alpha_x;  // q

    Vec theta0;   // m
    Vec theta_a;  // m
    Mat theta_u;  // p x m
    Mat theta_x;  // q x m

    Vec mu0;      // n
    Mat mu_u;     // p x n
    Mat mu_x;     // q x n

    double gamma0 = 0.0;
    double gamma_a = 0.0;  // the true ACE
    Vec gamma_u;   // p
    Vec gamma_x;   // q
    Vec gamma_au;  // p

    Mat rho;      // p x q, Corr(U, X)
    Mat sigma_x;  // q x q, Var(X), unit diagonal

    std::array<double, 3> noise_sd = {1.0, 1.0, 1.0};

    // Zero-initialized spec of the given shape.
    static LsemSpec zeros(const Dimensions& d);
};

struct Dataset {
    Vec a;  // N, values in {0,1}
    Vec y;  // N
    Mat z;  // N x m
    Mat w;  // N x n
    Mat x;  // N x q
    Mat u;  // N x p, diagnostics only; estimators cannot see it

    Eigen::Index rows() const { return a.size(); }
};

// What estimators are allowed to touch. Constructed from a Dataset; there is
// deliberately no path from here back to the u columns.
struct ObservedData {
    const Vec& a;
    const Vec& y;
    const Mat& z;
    const Mat& w;
    const Mat& x;

    explicit ObservedData(const Dataset& d) : a(d.a), y(d.y), z(d.z), w(d.w), x(d.x) {}
    ObservedData(const Vec& a_, const Vec& y_, const Mat& z_, const Mat& w_, const Mat& x_)
        : a(a_), y(y_), z(z_), w(w_), x(x_) {}

    Eigen::Index rows() const { return a.size(); }
};

// Every invariant violation as a human-readable line; empty means usable.
std::vector<std::string> validate(const LsemSpec& spec);

// Throws PreconditionError with the validate() diagnostics if invalid.
void require_valid(const LsemSpec& spec);

// gamma_a + gamma_au'E[U] = gamma_a, since E[U] = 0.
double true_ace(const LsemSpec& spec);

// Joint covariance [[I_p, rho], [rho^T, sigma_x]] of (U, X), and its lower
// Cholesky factor (throws if not positive definite).
Mat joint_covariance(const LsemSpec& spec);
Mat joint_cholesky(const LsemSpec& spec);

// i.i.d. draws; bit-identical output for identical (spec, n, seed) regardless
// of chunking. Row i consumes a fixed counter window of the keyed stream.
Dataset sample(const LsemSpec& spec, Eigen::Index n, std::uint64_t seed);

// Row-at-a-time sampler shared by sample() and the Monte Carlo moment path,
// so both see the same (u, x, a) variates for a given (spec, seed, row).
// Rows are addressed by index; drawing them in any order or from any thread
// gives identical values.
class RowSampler {
public:
    RowSampler(const LsemSpec& spec, std::uint64_t seed);

    // Fills u, x and a only (the prefix of the row's variate window).
    void draw_treatment(std::uint64_t row, Vec& u, Vec& x, double& a);
    // Fills the whole structural system.
    void draw_full(std::uint64_t row, Vec& u, Vec& x, double& a, Vec& z, Vec& w, double& y);

private:
    const LsemSpec& spec_;
    Mat chol_;
    std::uint64_t key_;
    Vec xi_, v_;
};

// JSON round trip. Field names follow the structural-equation notation;
// dimensions are inferred from array lengths and cross-checked.
std::string to_json(const LsemSpec& spec, int indent = 2);
LsemSpec spec_from_json(const std::string& text);
LsemSpec load_spec(const std::string& path);

// FNV-1a hash of the canonical JSON form, as fixed-width hex.
std::string spec_hash(const LsemSpec& spec);

}  // namespace proxbias
