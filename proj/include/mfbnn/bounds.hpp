#pragma once

// Explicit numeric values of the width-dependent bounds, and Monte-Carlo
// checks of the random-matrix facts they rest on.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "mfbnn/data.hpp"
#include "mfbnn/error.hpp"
#include "mfbnn/mfvi.hpp"
#include "mfbnn/net.hpp"
#include "mfbnn/nngp.hpp"
#include "mfbnn/rng.hpp"

namespace mfbnn {

struct BoundInputs {
    long M = 1;
    int L = 1;
    int d_in = 1;
    double x_norm = 0.0;  // |x|_2
    double kl = 0.0;
    double alpha = 0.0;

    void validate() const {
        if (M < 1 || L < 1 || d_in < 1) throw DomainError("bound inputs need M, L, d_in >= 1");
        if (!(x_norm >= 0.0) || !(kl >= 0.0)) throw DomainError("bound inputs need |x| >= 0 and kl >= 0");
    }
};

enum class BoundFormula { mean_1hl, mean_deep, mean_diff, second_moment, linear_gap };

inline std::string_view to_string(BoundFormula f) {
    switch (f) {
        case BoundFormula::mean_1hl: return "mean_1hl";
        case BoundFormula::mean_deep: return "mean_deep";
        case BoundFormula::mean_diff: return "mean_diff";
        case BoundFormula::second_moment: return "second_moment";
        case BoundFormula::linear_gap: return "linear_gap";
    }
    return "?";
}

struct BoundReport {
    double value = 0.0;
    std::vector<std::pair<std::string, double>> constants;
    BoundFormula formula = BoundFormula::mean_1hl;
    BoundInputs inputs;

    double constant(std::string_view name) const {
        for (const auto& [k, v] : constants)
            if (k == name) return v;
        throw DomainError("bound report has no constant '" + std::string(name) + "'");
    }
};

inline void write_bound_csv_header(std::ostream& os) {
    os << "formula_id,value,M,L,d_in,x_norm,kl,alpha,constants\n";
}

inline void write_bound_csv_row(std::ostream& os, const BoundReport& r) {
    os.precision(17);
    os << to_string(r.formula) << ',' << r.value << ',' << r.inputs.M << ',' << r.inputs.L << ','
       << r.inputs.d_in << ',' << r.inputs.x_norm << ',' << r.inputs.kl << ',' << r.inputs.alpha << ',';
    for (std::size_t i = 0; i < r.constants.size(); ++i)
        os << (i ? ";" : "") << r.constants[i].first << '=' << r.constants[i].second;
    os << '\n';
}

// --- constants -------------------------------------------------------------------

/// E|A|_2^2 <= eta_n n for an n-dominant standard Gaussian matrix.
inline double eta_constant(long n) {
    const double s = std::sqrt(2.0 * std::numbers::pi);
    return n >= 36 ? (37.0 + 6.0 * s) / 9.0 : 4.0 * (2.0 + s);
}

inline double gamma_constant(double alpha, long M) {
    if (alpha == 0.0) return M >= 36 ? 2.0 / 3.0 * (13.0 + 2.0 * std::sqrt(43.0)) : 2.0 * (6.0 + std::sqrt(38.0));
    return M >= 36 ? 28.0 + std::sqrt(793.0) : 48.0 + std::sqrt(2353.0);
}

inline double c_alpha_constant(double alpha) { return alpha == 0.0 ? 3.0 : 4.0; }

inline double rho_constant(double alpha, long M) {
    return std::max(c_alpha_constant(alpha) * eta_constant(M), gamma_constant(alpha, M));
}

inline constexpr double kMeanC1 = 4.0;
inline constexpr double kMeanC2 = 6.0;
inline const double kSecondMomentC1 = 16.0 + 25.0 * std::numbers::sqrt2;

// --- mean and second-moment bounds ---------------------------------------------------

/// One hidden layer: (2/3) sqrt((1 + |x|^2/d_in)/M) KL.
inline BoundReport mean_bound_1hl(const BoundInputs& in) {
    in.validate();
    if (in.L != 1) throw DomainError("mean_bound_1hl applies to one hidden layer only");
    BoundReport r;
    r.formula = BoundFormula::mean_1hl;
    r.inputs = in;
    const double scale = 1.0 + in.x_norm * in.x_norm / in.d_in;
    r.value = 2.0 / 3.0 * std::sqrt(scale / static_cast<double>(in.M)) * in.kl;
    r.constants = {{"leading", 2.0 / 3.0}, {"input_scale", scale}};
    return r;
}

namespace detail {

inline double deep_kl_factor(int L, double kl) {
    return kl * std::max(std::pow(2.0 * kl, 0.5 * (L - 1)), 1.0);
}

}  // namespace detail

/// |E_Q f~(x)| <= c1 c2^{L-1} L (|a| + 1 + |x|/sqrt(d_in)) / sqrt(M) KL ((2KL)^{(L-1)/2} v 1).
inline BoundReport mean_bound_deep(const BoundInputs& in) {
    in.validate();
    BoundReport r;
    r.formula = BoundFormula::mean_deep;
    r.inputs = in;
    const double lead = kMeanC1 * std::pow(kMeanC2, in.L - 1) * in.L;
    const double input = std::abs(in.alpha) + 1.0 + in.x_norm / std::sqrt(static_cast<double>(in.d_in));
    r.value = lead * input / std::sqrt(static_cast<double>(in.M)) * detail::deep_kl_factor(in.L, in.kl);
    r.constants = {{"c1", kMeanC1}, {"c2", kMeanC2}, {"input_scale", input}};
    return r;
}

/// |E_Q f(x) - E_Q f(x')|; the sum of the two single-point bounds.
inline BoundReport mean_diff_bound(const BoundInputs& in, double x2_norm) {
    in.validate();
    if (!(x2_norm >= 0.0)) throw DomainError("mean_diff_bound: |x'| must be >= 0");
    BoundReport r;
    r.formula = BoundFormula::mean_diff;
    r.inputs = in;
    const double lead = kMeanC1 * std::pow(kMeanC2, in.L - 1) * in.L;
    const double input = 2.0 * std::abs(in.alpha) + 2.0 +
                         (in.x_norm + x2_norm) / std::sqrt(static_cast<double>(in.d_in));
    r.value = lead * input / std::sqrt(static_cast<double>(in.M)) * detail::deep_kl_factor(in.L, in.kl);
    r.constants = {{"c1", kMeanC1}, {"c2", kMeanC2}, {"input_scale", input}, {"x2_norm", x2_norm}};
    return r;
}

/// |E_Q f~^2 - E_P f~^2| <= c1 L^{1/2} rho^L (a^2 + 1 + |x|^2/d_in)/sqrt(M) sqrt(KL) (2KL v 1)^{L+1/2}.
inline BoundReport second_moment_bound(const BoundInputs& in) {
    in.validate();
    BoundReport r;
    r.formula = BoundFormula::second_moment;
    r.inputs = in;
    const double eta = eta_constant(in.M);
    const double gam = gamma_constant(in.alpha, in.M);
    const double ca = c_alpha_constant(in.alpha);
    const double rho = std::max(ca * eta, gam);
    const double input = in.alpha * in.alpha + 1.0 + in.x_norm * in.x_norm / in.d_in;
    r.value = kSecondMomentC1 * std::sqrt(static_cast<double>(in.L)) * std::pow(rho, in.L) * input /
              std::sqrt(static_cast<double>(in.M)) * std::sqrt(in.kl) *
              std::pow(std::max(2.0 * in.kl, 1.0), in.L + 0.5);
    r.constants = {{"c1", kSecondMomentC1}, {"eta", eta}, {"gamma", gam},
                   {"c_alpha", ca},         {"rho", rho}, {"input_scale", input}};
    return r;
}

// --- KL upper bounds from the likelihood ------------------------------------------

/// ((L+1) N + sum_n (y_n^2 + |x_n|^2)) / (2 sigma2), with |x|^2 unscaled.
inline double kl_bound_gaussian(const Dataset& ds, int L, double sigma2) {
    if (!(sigma2 > 0.0)) throw DomainError("kl_bound_gaussian: sigma2 must be > 0");
    if (L < 1) throw DomainError("kl_bound_gaussian: L must be >= 1");
    if (ds.empty()) return 0.0;
    const double n = static_cast<double>(ds.size());
    return ((L + 1.0) * n + ds.y.squaredNorm() + ds.X.squaredNorm()) / (2.0 * sigma2);
}

/// log p(y | f) >= a f^2 + b f + c for every f.
struct QuadraticBound {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double operator()(double f) const { return a * f * f + b * f + c; }
};

inline QuadraticBound quadratic_lower_bound(const LikelihoodSpec& lik, double y) {
    lik.validate();
    switch (lik.kind) {
        case LikelihoodKind::gaussian:
            return {-0.5 / lik.sigma2, y / lik.sigma2,
                    -0.5 * y * y / lik.sigma2 - 0.5 * std::log(2.0 * std::numbers::pi * lik.sigma2)};
        case LikelihoodKind::student_t: {
            const double nu = lik.nu;
            return {-(nu + 1.0) / (2.0 * nu), (nu + 1.0) * y / nu,
                    student_t_log_normalizer(nu) - (nu + 1.0) * y * y / (2.0 * nu)};
        }
        case LikelihoodKind::logistic:
            if (y != 0.0 && y != 1.0) throw DomainError("logistic likelihood requires y in {0, 1}");
            return {-0.125, y == 1.0 ? 0.5 : -0.5, -std::log(2.0)};
    }
    return {};
}

/// sup_f log p(y | f), the per-point ceiling used in the general bound.
inline double likelihood_ceiling(const LikelihoodSpec& lik) {
    lik.validate();
    switch (lik.kind) {
        case LikelihoodKind::gaussian: return -0.5 * std::log(2.0 * std::numbers::pi * lik.sigma2);
        case LikelihoodKind::student_t: return student_t_log_normalizer(lik.nu);
        case LikelihoodKind::logistic: return 0.0;
    }
    return 0.0;
}

/// C N - sum_n [a_n V(x_n) + c_n], V(x) = L + 1 + |x|^2 / d_in (prior mean of f is 0).
inline double kl_bound_general(const Dataset& ds, int L, int d_in, const LikelihoodSpec& lik) {
    if (L < 1 || d_in < 1) throw DomainError("kl_bound_general: L and d_in must be >= 1");
    if (ds.empty()) return 0.0;
    const double C = likelihood_ceiling(lik);
    double s = 0.0;
    for (Eigen::Index n = 0; n < ds.size(); ++n) {
        const auto q = quadratic_lower_bound(lik, ds.y[n]);
        const double V = L + 1.0 + ds.X.row(n).squaredNorm() / d_in;
        s += q.a * V + q.c;
    }
    return C * static_cast<double>(ds.size()) - s;
}

/// Monte-Carlo KL upper bound using the prior with an optimised output bias:
///   (1/2s2) sum_n [(y_n - mu_b)^2 + s2_b + E_P f~(x_n)^2] + KL(N(mu_b, s2_b) || N(0, 1)).
/// `base`, when given, replaces the prior over every parameter except the final bias
/// (laid out for `arch` without its final bias).
inline McEstimate kl_bound_empirical(const Dataset& ds, const Architecture& arch, double sigma2, int S, Rng& rng,
                                     const MeanFieldGaussian* base = nullptr) {
    if (S < 2) throw DomainError("kl_bound_empirical: S must be >= 2");
    if (ds.empty()) throw DomainError("kl_bound_empirical: dataset is empty");
    if (arch.d_out != 1) throw ShapeError("kl_bound_empirical expects d_out = 1");
    Architecture body = arch;
    body.include_final_bias = false;
    const auto [mu_b, s2_b] = optimal_output_bias(ds.y, sigma2);
    MeanFieldGaussian q = base ? *base : MeanFieldGaussian::prior(body);
    q.check(body);

    Vector sq(S);
    Vector eps(q.size());
    for (int s = 0; s < S; ++s) {
        fill_normal(eps, rng);
        sq[s] = forward(body, sample_reparam(q, eps), ds.X).col(0).squaredNorm();
    }
    const double resid = (ds.y.array() - mu_b).square().sum();
    const double n = static_cast<double>(ds.size());
    const double bias_kl = 0.5 * (mu_b * mu_b + s2_b - 1.0 - std::log(s2_b));
    McEstimate e;
    e.estimate = (resid + n * s2_b + sq.mean()) / (2.0 * sigma2) + bias_kl;
    const double sd = std::sqrt((sq.array() - sq.mean()).square().sum() / (S - 1.0));
    e.std_error = sd / std::sqrt(static_cast<double>(S)) / (2.0 * sigma2);
    return e;
}

/// Data-dependent certificate
///   (1/2s2) sum_n [2 |y_n| |E_Q f(x_n) - E_P f(x_n)| + |E_Q f^2(x_n) - E_P f^2(x_n)|],
/// with both expectations estimated on shared noise. std_error is a triangle-inequality
/// aggregate of the per-point standard errors.
inline McEstimate kl_gap_certificate(const MeanFieldGaussian& q, const Architecture& arch, const Dataset& ds,
                                     double sigma2, int S, Rng& rng) {
    if (!(sigma2 > 0.0)) throw DomainError("kl_gap_certificate: sigma2 must be > 0");
    if (S < 2) throw DomainError("kl_gap_certificate: S must be >= 2");
    if (arch.d_out != 1) throw ShapeError("kl_gap_certificate expects d_out = 1");
    q.check(arch);
    const auto N = ds.size();
    Matrix D1(S, N), D2(S, N);
    Vector eps(q.size());
    for (int s = 0; s < S; ++s) {
        fill_normal(eps, rng);
        const Vector fq = forward(arch, sample_reparam(q, eps), ds.X).col(0);
        const Vector fp = forward(arch, eps, ds.X).col(0);
        D1.row(s) = (fq - fp).transpose();
        D2.row(s) = (fq.array().square() - fp.array().square()).matrix().transpose();
    }
    const auto m1 = detail::summarize_draws(D1);
    const auto m2 = detail::summarize_draws(D2);
    McEstimate e;
    for (Eigen::Index n = 0; n < N; ++n) {
        e.estimate += 2.0 * std::abs(ds.y[n]) * std::abs(m1.mean[n]) + std::abs(m2.mean[n]);
        e.std_error += 2.0 * std::abs(ds.y[n]) * m1.mean_se[n] + m2.mean_se[n];
    }
    e.estimate /= 2.0 * sigma2;
    e.std_error /= 2.0 * sigma2;
    return e;
}

// --- affine networks ---------------------------------------------------------------

/// |E f(x) - E f(x')| <= d_in^{-1/2} M^{-L/2} (2KL/(L+1))^{(L+1)/2} |x - x'| for identity activation.
inline double linear_mean_gap_bound(long M, int L, int d_in, double kl, const Vector& x, const Vector& x2) {
    if (M < 1 || L < 1 || d_in < 1) throw DomainError("linear_mean_gap_bound: M, L, d_in must be >= 1");
    if (!(kl >= 0.0)) throw DomainError("linear_mean_gap_bound: kl must be >= 0");
    if (x.size() != x2.size()) throw ShapeError("linear_mean_gap_bound: x and x' differ in length");
    return std::pow(static_cast<double>(d_in), -0.5) * std::pow(static_cast<double>(M), -0.5 * L) *
           std::pow(2.0 * kl / (L + 1.0), 0.5 * (L + 1.0)) * (x - x2).norm();
}

struct LinearLowerBound {
    MeanFieldGaussian q;
    double c = 0.0;              // mean placed at entry (1, 1) of every weight matrix
    double analytic_gap = 0.0;   // d_in^{-1/2} M^{-L/2} c^{L+1}
    double forward_gap = 0.0;    // forward(mu, e_1) - forward(mu, 0)
    double kl = 0.0;             // kl_to_standard_normal(q)
};

/// Variational family attaining the affine-network bound at x = e_1, x' = 0.
inline LinearLowerBound linear_lower_bound_construction(const Architecture& arch, double kl) {
    if (arch.activation.kind != ActivationKind::identity)
        throw DomainError("linear_lower_bound_construction needs the identity activation");
    if (!(kl >= 0.0)) throw DomainError("linear_lower_bound_construction: kl must be >= 0");
    const ParamLayout layout(arch);
    LinearLowerBound r;
    r.c = std::sqrt(2.0 * kl / (arch.depth + 1.0));
    r.q = MeanFieldGaussian::prior(layout.size());
    for (int l = 1; l <= layout.num_layers(); ++l) r.q.mu[layout.weight(l).offset] = r.c;
    r.kl = kl_to_standard_normal(r.q);
    r.analytic_gap = std::pow(static_cast<double>(arch.d_in), -0.5) *
                     std::pow(static_cast<double>(arch.width), -0.5 * arch.depth) * std::pow(r.c, arch.depth + 1);
    Matrix X = Matrix::Zero(2, arch.d_in);
    X(0, 0) = 1.0;
    const Matrix F = forward(arch, r.q.mu, X);
    r.forward_gap = std::abs(F(0, 0) - F(1, 0));
    return r;
}

// --- parameter bounds in terms of KL -----------------------------------------------

struct CheckResult {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    bool pass = true;
    double slack() const { return rhs - lhs; }
};

struct CheckReport {
    std::vector<CheckResult> checks;
    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
    }
    void add(std::string name, double lhs, double rhs, double rel_tol = 1e-12) {
        const bool ok = lhs <= rhs + rel_tol * std::max(1.0, std::abs(rhs));
        checks.push_back({std::move(name), lhs, rhs, ok});
    }
};

/// Items (i)-(iv): |mu|^2 <= 2KL, |sigma - 1|^2 <= 2KL, sigma_max <= 1 + sqrt(2KL),
/// |sigma^2 - 1|^2 <= (2 + sqrt(2KL))^2 2KL.
/// `kl` is taken as given (a test double can pair a q with a stale KL); the
/// one-argument form computes it.
inline CheckReport verify_param_bounds(const MeanFieldGaussian& q, double kl) {
    const double K = std::sqrt(2.0 * kl);
    const Vector sigma = q.sigma();
    CheckReport r;
    r.add("mu_norm2", q.mu.squaredNorm(), 2.0 * kl);
    r.add("sigma_minus_one_norm2", (sigma.array() - 1.0).square().sum(), 2.0 * kl);
    r.add("sigma_max", sigma.size() ? sigma.maxCoeff() : 0.0, 1.0 + K);
    r.add("sigma2_minus_one_norm2", (sigma.array().square() - 1.0).square().sum(), (2.0 + K) * (2.0 + K) * 2.0 * kl);
    return r;
}

inline CheckReport verify_param_bounds(const MeanFieldGaussian& q) {
    return verify_param_bounds(q, kl_to_standard_normal(q));
}

/// As above, plus per layer max_i V[W]_i + max_j E[b_j^2] <= (sqrt2 + sqrt(2KL))^2.
inline CheckReport verify_param_bounds(const MeanFieldGaussian& q, const Architecture& arch, double kl) {
    q.check(arch);
    CheckReport r = verify_param_bounds(q, kl);
    const double K = std::sqrt(2.0 * kl);
    const double rhs = (std::numbers::sqrt2 + K) * (std::numbers::sqrt2 + K);
    const Vector s2 = q.sigma2();
    const ParamLayout layout(arch);
    for (int l = 1; l <= layout.num_layers(); ++l) {
        const auto& w = layout.weight(l);
        const auto& b = layout.bias(l);
        double lhs = s2.segment(w.offset, w.size()).maxCoeff();
        if (b.rows > 0)
            lhs += (q.mu.segment(b.offset, b.rows).array().square() + s2.segment(b.offset, b.rows).array()).maxCoeff();
        r.add("layer" + std::to_string(l) + "_variance_plus_bias_second_moment", lhs, rhs);
    }
    return r;
}

inline CheckReport verify_param_bounds(const MeanFieldGaussian& q, const Architecture& arch) {
    return verify_param_bounds(q, arch, kl_to_standard_normal(q));
}

// --- random-matrix checks ------------------------------------------------------------

struct OpNormReport {
    long I = 0, J = 0;
    double sigma = 1.0;
    int trials = 0;
    double mean_norm = 0.0, mean_norm_se = 0.0, norm_bound = 0.0;
    double mean_sq = 0.0, mean_sq_se = 0.0, sq_bound = 0.0;
    bool norm_pass = false, sq_pass = false;
    bool pass() const { return norm_pass && sq_pass; }
};

inline double spectral_norm(const Matrix& A) {
    if (A.size() == 0) return 0.0;
    Eigen::BDCSVD<Matrix> svd(A);
    return svd.singularValues()(0);
}

/// E|A|_2 <= 2 sigma sqrt(I v J) and E|A|_2^2 <= sigma^2 eta (I v J) for i.i.d. N(0, sigma^2) entries,
/// each asserted with a 4 SE margin.
inline OpNormReport mc_opnorm_checks(long I, long J, double sigma, int trials, Rng& rng) {
    if (trials < 30) throw DomainError("mc_opnorm_checks: need at least 30 trials");
    if (I < 1 || J < 1) throw DomainError("mc_opnorm_checks: I, J must be >= 1");
    if (!(sigma >= 0.0)) throw DomainError("mc_opnorm_checks: sigma must be >= 0");
    OpNormReport r;
    r.I = I;
    r.J = J;
    r.sigma = sigma;
    r.trials = trials;
    Vector norms(trials);
    for (int t = 0; t < trials; ++t) norms[t] = sigma * spectral_norm(standard_normal(I, J, rng));
    const Vector sq = norms.array().square();
    auto se = [&](const Vector& v, double m) {
        return std::sqrt((v.array() - m).square().sum() / (trials - 1.0) / trials);
    };
    const long n = std::max(I, J);
    r.mean_norm = norms.mean();
    r.mean_norm_se = se(norms, r.mean_norm);
    r.norm_bound = 2.0 * sigma * std::sqrt(static_cast<double>(n));
    r.mean_sq = sq.mean();
    r.mean_sq_se = se(sq, r.mean_sq);
    r.sq_bound = sigma * sigma * eta_constant(n) * static_cast<double>(n);
    r.norm_pass = r.mean_norm <= r.norm_bound + 4.0 * r.mean_norm_se;
    r.sq_pass = r.mean_sq <= r.sq_bound + 4.0 * r.mean_sq_se;
    return r;
}

}  // namespace mfbnn
