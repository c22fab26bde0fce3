#pragma once

// Constructions showing where prior reversion fails (activations that are not
// odd plus a constant) and how slowly it can happen for odd activations.

#include <cmath>
#include <numbers>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "mfbnn/data.hpp"
#include "mfbnn/error.hpp"
#include "mfbnn/mfvi.hpp"
#include "mfbnn/net.hpp"
#include "mfbnn/nngp.hpp"
#include "mfbnn/quadrature.hpp"
#include "mfbnn/rng.hpp"

namespace mfbnn {

struct CounterexampleSpec {
    Architecture arch;  // activation defining lambda; width is irrelevant for the dataset
    double C = 1.0 / 2.34e-3;
    Eigen::RowVectorXd x, x2;

    /// relu, one hidden layer, inputs 0 and 1, noise variance 2.34e-3.
    static CounterexampleSpec standard() {
        CounterexampleSpec s;
        s.arch.depth = 1;
        s.arch.width = 1024;
        s.arch.d_in = 1;
        s.arch.activation = ActivationSpec::make(ActivationKind::relu);
        s.x = Eigen::RowVectorXd::Zero(1);
        s.x2 = Eigen::RowVectorXd::Ones(1);
        return s;
    }
};

/// Prior everywhere except E[W_{L+1}] = sqrt(C/M) 1; KL to the prior is C/2.
inline MeanFieldGaussian build_qc(const Architecture& arch, double C) {
    if (!(C >= 0.0)) throw DomainError("build_qc: C must be >= 0");
    const ParamLayout layout(arch);
    MeanFieldGaussian q = MeanFieldGaussian::prior(layout.size());
    const auto& w = layout.weight(arch.depth + 1);
    q.mu.segment(w.offset, w.size()).setConstant(std::sqrt(C / arch.width));
    return q;
}

/// Two points (x, sqrt(C) lambda(x)), (x', sqrt(C) lambda(x')) with noise variance 1/C.
inline Dataset build_counterexample_dataset(const CounterexampleSpec& spec) {
    if (!(spec.C > 0.0)) throw DomainError("counterexample: C must be > 0");
    if (spec.x.size() != spec.arch.d_in || spec.x2.size() != spec.arch.d_in)
        throw ShapeError("counterexample: inputs must have d_in entries");
    const double l1 = lambda_fn(spec.arch, spec.x);
    const double l2 = lambda_fn(spec.arch, spec.x2);
    if (!(std::abs(l1 - l2) > 1e-12 * std::max(1.0, std::abs(l1))))
        throw DomainError("activation/inputs give no even-part separation");
    Eigen::MatrixXd X(2, spec.arch.d_in);
    X.row(0) = spec.x;
    X.row(1) = spec.x2;
    Eigen::VectorXd y(2);
    y << std::sqrt(spec.C) * l1, std::sqrt(spec.C) * l2;
    return make_dataset(std::move(X), std::move(y), "counterexample", 1.0 / spec.C);
}

/// sqrt(C) beta / sqrt2 - sqrt2 sqrt(sigma2 C + kappa(x) + kappa(x') + beta^2); may be negative.
inline double mean_gap_lower_bound(double C, double sigma2, double beta, double kappa_x, double kappa_x2) {
    if (!(C >= 0.0 && sigma2 >= 0.0 && beta >= 0.0 && kappa_x >= 0.0 && kappa_x2 >= 0.0))
        throw DomainError("mean_gap_lower_bound: inputs must be >= 0");
    return std::sqrt(C) * beta / std::numbers::sqrt2 -
           std::numbers::sqrt2 * std::sqrt(sigma2 * C + kappa_x + kappa_x2 + beta * beta);
}

/// Half the gap of the ideal predictor sqrt(C) lambda.
inline double counterexample_gap_threshold(const CounterexampleSpec& spec) {
    return 0.5 * std::sqrt(spec.C) * std::abs(lambda_fn(spec.arch, spec.x) - lambda_fn(spec.arch, spec.x2));
}

struct CounterexampleRow {
    int width = 0;
    double gap = 0.0;
    double gap_se = 0.0;
    double elbo_trained = 0.0;
    double elbo_qc = 0.0;  // Q^C in the fitted network; only fits the data when the activations match
    double elbo_prior_optbias = 0.0;
};

struct CounterexampleReport {
    std::vector<CounterexampleRow> rows;
    double threshold = 0.0;
    bool expect_persistent = true;  // activation is not odd plus a constant
    bool pass = true;               // gap >= threshold at the largest width (only when persistent)
};

/// Prior with only the output bias moved to its Gaussian-likelihood optimum.
inline MeanFieldGaussian prior_with_optimal_bias(const Architecture& arch, const Dataset& ds) {
    if (!arch.include_final_bias) throw DomainError("prior_with_optimal_bias needs a final bias");
    const ParamLayout layout(arch);
    MeanFieldGaussian q = MeanFieldGaussian::prior(layout.size());
    const auto b = optimal_output_bias(ds.y, ds.noise_sigma2);
    const auto off = layout.bias(arch.depth + 1).offset;
    q.mu[off] = b.mu_b;
    q.log_sigma[off] = 0.5 * std::log(b.sigma2_b);
    return q;
}

struct CounterexampleOptions {
    int predictive_samples = 1000;
    int elbo_samples = 256;
};

/// Trains on the dataset built from `spec` with `fit_activation` at each width and reports
/// the predictive mean gap and ELBO comparisons.
inline CounterexampleReport run_counterexample_check(const CounterexampleSpec& spec, ActivationKind fit_activation,
                                                     const std::vector<int>& widths, const TrainConfig& cfg,
                                                     const CounterexampleOptions& opt = {}) {
    if (widths.empty()) throw ConfigError("counterexample: width list is empty");
    const Dataset ds = build_counterexample_dataset(spec);
    const auto lik = LikelihoodSpec::gaussian(ds.noise_sigma2);
    CounterexampleReport rep;
    rep.threshold = counterexample_gap_threshold(spec);
    Architecture fit = spec.arch;
    fit.activation = ActivationSpec::make(fit_activation);
    rep.expect_persistent = !fit.activation.is_odd_plus_constant;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const Architecture a = fit.with_width(widths[i]);
        TrainConfig c = cfg;
        c.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(widths[i])});
        const auto res = train(a, ds, lik, c);
        Rng rng(derive_seed(c.seed, {0x6576616cULL}));
        const auto pm = predictive_moments(res.q, a, ds.X, opt.predictive_samples, rng);
        CounterexampleRow row;
        row.width = widths[i];
        row.gap = std::abs(pm.mean[0] - pm.mean[1]);
        row.gap_se = std::hypot(pm.mean_se[0], pm.mean_se[1]);
        row.elbo_trained = elbo_estimate(res.q, a, ds, lik, opt.elbo_samples, rng).elbo;
        row.elbo_qc = elbo_estimate(build_qc(a, spec.C), a, ds, lik, opt.elbo_samples, rng).elbo;
        row.elbo_prior_optbias = elbo_estimate(prior_with_optimal_bias(a, ds), a, ds, lik, opt.elbo_samples, rng).elbo;
        rep.rows.push_back(row);
    }
    if (rep.expect_persistent) rep.pass = rep.rows.back().gap >= rep.threshold;
    return rep;
}

inline void write_counterexample_csv(std::ostream& os, const CounterexampleReport& rep) {
    os << "width,gap,elbo_trained,elbo_qc,elbo_prior_optbias\n";
    os.precision(17);
    for (const auto& r : rep.rows)
        os << r.width << ',' << r.gap << ',' << r.elbo_trained << ',' << r.elbo_qc << ',' << r.elbo_prior_optbias << '\n';
}

// --- odd activations: the M^{-1/2} rate cannot be improved ---------------------------

/// Prior except E[b_L] = mu 1 and E[W_{L+1}] = mu 1^T, mu = sqrt(K/M); KL = K.
inline MeanFieldGaussian build_odd_family_member(const Architecture& arch, double K) {
    if (!(K >= 0.0)) throw DomainError("odd family: K must be >= 0");
    const ParamLayout layout(arch);
    MeanFieldGaussian q = MeanFieldGaussian::prior(layout.size());
    const double mu = std::sqrt(K / arch.width);
    const auto& b = layout.bias(arch.depth);
    const auto& w = layout.weight(arch.depth + 1);
    q.mu.segment(b.offset, b.rows).setConstant(mu);
    q.mu.segment(w.offset, w.size()).setConstant(mu);
    return q;
}

struct OddFamilyRow {
    int width = 0;
    double kl = 0.0;
    double scaled_gap = 0.0;  // sqrt(M) |E f(x) - E f(x')|
    double scaled_gap_se = 0.0;
};

struct OddFamilyReport {
    double c = 0.0;  // |E phi'(sqrt(k(x)) Z) - E phi'(sqrt(k(x')) Z)|
    double limit = 0.0;  // c K
    std::vector<OddFamilyRow> rows;
};

/// For each width, sqrt(M) times the mean gap of the family member.
/// Conditionally on z_{L-1}, each unit of z_L is N(mu, 1 + |phi(z_{L-1})|^2/M), so
///   E f(x) = sqrt(K) E[g_mu(1 + |phi(z_{L-1}(x))|^2 / M)],  g_mu(v) = E phi(mu + sqrt(v) Z),
/// evaluated by quadrature in Z and Monte Carlo over z_{L-1} (shared draws for x, x').
/// For L = 1 the outer expectation is deterministic.
inline OddFamilyReport odd_lower_bound_family(const Architecture& arch_template, double K,
                                              const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& x2,
                                              const std::vector<int>& widths, int S, Rng& rng) {
    const auto& act = arch_template.activation;
    if (act.kind == ActivationKind::relu || !act.is_odd_plus_constant)
        throw DomainError("odd_lower_bound_family needs a smooth odd-plus-constant activation");
    if (act.kind == ActivationKind::identity)
        throw DomainError("odd_lower_bound_family needs a non-linear activation");
    if (!(K > 0.0)) throw DomainError("odd_lower_bound_family: K must be > 0");
    if (S < 2) throw DomainError("odd_lower_bound_family: S must be >= 2");
    OddFamilyReport rep;
    const int L = arch_template.depth;
    {
        const double k1 = nngp_diag_recursion(arch_template, x)[L - 1];
        const double k2 = nngp_diag_recursion(arch_template, x2)[L - 1];
        rep.c = std::abs(act_derivative_moment(act, k1) - act_derivative_moment(act, k2));
        rep.limit = rep.c * K;
    }
    auto g = [&](double mu, double v) {
        const double s = std::sqrt(v);
        return expect_normal([&](double z) { return act.value(mu + s * z); });
    };
    for (int M : widths) {
        const Architecture a = arch_template.with_width(M);
        OddFamilyRow row;
        row.width = M;
        row.kl = kl_to_standard_normal(build_odd_family_member(a, K));
        const double mu = std::sqrt(K / M);
        const double sqrtM = std::sqrt(static_cast<double>(M));
        if (L == 1) {
            const double v1 = 1.0 + x.squaredNorm() / a.d_in;
            const double v2 = 1.0 + x2.squaredNorm() / a.d_in;
            row.scaled_gap = sqrtM * std::sqrt(K) * std::abs(g(mu, v1) - g(mu, v2));
        } else {
            // prior network truncated to L-1 hidden layers gives z_{L-1}
            Architecture body = a;
            body.depth = L - 1;
            const ParamLayout layout(body);
            Matrix X(2, a.d_in);
            X.row(0) = x;
            X.row(1) = x2;
            ForwardCache cache;
            Vector d(S);
            for (int s = 0; s < S; ++s) {
                forward_cached(body, layout, sample_prior(body, rng), X, cache);
                const Matrix& h = cache.post.back();
                const double v1 = 1.0 + h.col(0).squaredNorm() / M;
                const double v2 = 1.0 + h.col(1).squaredNorm() / M;
                d[s] = sqrtM * std::sqrt(K) * (g(mu, v1) - g(mu, v2));
            }
            const double m = d.mean();
            row.scaled_gap = std::abs(m);
            row.scaled_gap_se = std::sqrt((d.array() - m).square().sum() / (S - 1.0) / S);
        }
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace mfbnn
