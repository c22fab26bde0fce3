#pragma once

// Mean-field Gaussian posterior approximation over the flat parameter vector,
// reparameterized ELBO with pathwise gradients, and the SGD training loop.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mfbnn/data.hpp"
#include "mfbnn/error.hpp"
#include "mfbnn/net.hpp"
#include "mfbnn/rng.hpp"

namespace mfbnn {

struct MeanFieldGaussian {
    ParamVector mu;
    ParamVector log_sigma;  // sigma = exp(log_sigma)

    static MeanFieldGaussian prior(Eigen::Index n) {
        return {ParamVector::Zero(n), ParamVector::Zero(n)};
    }
    static MeanFieldGaussian prior(const Architecture& arch) { return prior(param_count(arch)); }

    Eigen::Index size() const { return mu.size(); }
    Vector sigma() const { return log_sigma.array().exp(); }
    Vector sigma2() const { return (2.0 * log_sigma.array()).exp(); }

    void check(const Architecture& arch) const {
        const auto n = param_count(arch);
        if (mu.size() != n || log_sigma.size() != n)
            throw ShapeError("variational parameters do not match the architecture (" +
                             std::to_string(mu.size()) + " vs " + std::to_string(n) + ")");
    }
};

/// KL(q || N(0, I)) = 1/2 (|mu|^2 + sum r(sigma^2)), r(a) = a - 1 - log a.
inline double kl_to_standard_normal(const MeanFieldGaussian& q) {
    if (q.mu.size() != q.log_sigma.size()) throw ShapeError("mu and log_sigma lengths differ");
    double s = q.mu.squaredNorm();
    for (Eigen::Index i = 0; i < q.log_sigma.size(); ++i) {
        const double ls = q.log_sigma[i];
        // a - 1 - log a with a = exp(2 ls); expm1 keeps it accurate near the prior
        s += std::expm1(2.0 * ls) - 2.0 * ls;
    }
    return 0.5 * s;
}

inline ParamVector sample_reparam(const MeanFieldGaussian& q, const Vector& noise) {
    if (noise.size() != q.mu.size() || q.log_sigma.size() != q.mu.size())
        throw ShapeError("noise length does not match the variational family");
    return q.mu.array() + q.log_sigma.array().exp() * noise.array();
}

// --- likelihoods ------------------------------------------------------------

enum class LikelihoodKind { gaussian, student_t, logistic };

struct LikelihoodSpec {
    LikelihoodKind kind = LikelihoodKind::gaussian;
    double sigma2 = 1.0;  // gaussian noise variance
    double nu = 1.0;      // student-t degrees of freedom (unit scale)

    static LikelihoodSpec gaussian(double s2) {
        if (!(s2 > 0.0)) throw DomainError("gaussian likelihood needs sigma2 > 0");
        return {LikelihoodKind::gaussian, s2, 1.0};
    }
    static LikelihoodSpec student_t(double nu) {
        if (!(nu > 0.0)) throw DomainError("student-t likelihood needs nu > 0");
        return {LikelihoodKind::student_t, 1.0, nu};
    }
    static LikelihoodSpec logistic() { return {LikelihoodKind::logistic, 1.0, 1.0}; }

    void validate() const {
        if (kind == LikelihoodKind::gaussian && !(sigma2 > 0.0))
            throw DomainError("gaussian likelihood needs sigma2 > 0");
        if (kind == LikelihoodKind::student_t && !(nu > 0.0))
            throw DomainError("student-t likelihood needs nu > 0");
    }
};

/// log Gamma((nu+1)/2) - log Gamma(nu/2) - 1/2 log(nu pi).
inline double student_t_log_normalizer(double nu) {
    return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
}

namespace detail {

inline double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

inline void check_binary(const Vector& y) {
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y[i] != 0.0 && y[i] != 1.0)
            throw DomainError("logistic likelihood requires y in {0, 1} (index " + std::to_string(i) + ")");
}

// log p(y_i | f_i) and d/df, written into ll and dll.
inline void loglik_terms(const LikelihoodSpec& lik, const Vector& y, const Eigen::Ref<const Vector>& f,
                         Vector& ll, Vector* dll) {
    const Eigen::Index n = y.size();
    ll.resize(n);
    if (dll) dll->resize(n);
    switch (lik.kind) {
        case LikelihoodKind::gaussian: {
            const double c = -0.5 * std::log(2.0 * std::numbers::pi * lik.sigma2);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double r = y[i] - f[i];
                ll[i] = c - 0.5 * r * r / lik.sigma2;
                if (dll) (*dll)[i] = r / lik.sigma2;
            }
            break;
        }
        case LikelihoodKind::student_t: {
            const double c = student_t_log_normalizer(lik.nu);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double r = y[i] - f[i];
                ll[i] = c - 0.5 * (lik.nu + 1.0) * std::log1p(r * r / lik.nu);
                if (dll) (*dll)[i] = (lik.nu + 1.0) * r / (lik.nu + r * r);
            }
            break;
        }
        case LikelihoodKind::logistic: {
            for (Eigen::Index i = 0; i < n; ++i) {
                // y f - log(1 + e^f)
                ll[i] = y[i] * f[i] - softplus(f[i]);
                if (dll) (*dll)[i] = y[i] - 0.5 * (1.0 + std::tanh(0.5 * f[i]));
            }
            break;
        }
    }
}

}  // namespace detail

inline double log_likelihood(const LikelihoodSpec& lik, const Vector& y, const Vector& f) {
    lik.validate();
    if (y.size() != f.size()) throw ShapeError("log_likelihood: y and f lengths differ");
    if (lik.kind == LikelihoodKind::logistic) detail::check_binary(y);
    Vector ll;
    detail::loglik_terms(lik, y, f, ll, nullptr);
    return ll.sum();
}

// --- ELBO -------------------------------------------------------------------

struct ElboTerms {
    double elbo = 0.0;
    double kl = 0.0;
    double ell = 0.0;            // expected log-likelihood (scaled)
    double ell_std_error = 0.0;  // over the S draws
};

struct ElboGradient {
    Vector d_mu;
    Vector d_log_sigma;
    ElboTerms terms;

    double squared_norm() const { return d_mu.squaredNorm() + d_log_sigma.squaredNorm(); }
};

namespace detail {

inline void check_regression_data(const Architecture& arch, const Matrix& X, const Vector& y) {
    if (arch.d_out != 1) throw ShapeError("likelihoods are defined for scalar outputs (d_out = 1)");
    if (X.rows() != y.size()) throw ShapeError("X and y row counts differ");
    if (X.rows() > 0 && X.cols() != arch.d_in) throw ShapeError("X has the wrong number of columns");
}

}  // namespace detail

/// ELBO and optional gradient for a fixed set of standard-normal draws
/// (one column of `noise` per Monte-Carlo sample). The log-likelihood is
/// multiplied by `ll_scale` (N / batch size for mini-batches).
/// Deterministic in its inputs, which is what the finite-difference checks rely on.
inline ElboTerms elbo_with_noise(const MeanFieldGaussian& q, const Architecture& arch,
                                 const Matrix& X, const Vector& y, const LikelihoodSpec& lik,
                                 const Matrix& noise, double ll_scale = 1.0,
                                 ElboGradient* grad = nullptr) {
    q.check(arch);
    lik.validate();
    detail::check_regression_data(arch, X, y);
    if (lik.kind == LikelihoodKind::logistic) detail::check_binary(y);
    const Eigen::Index S = noise.cols();
    if (S < 1) throw DomainError("need at least one Monte-Carlo sample");
    if (noise.rows() != q.size()) throw ShapeError("noise rows do not match parameter count");

    const ParamLayout layout(arch);
    const Vector sigma = q.log_sigma.array().exp();
    ElboTerms t;
    t.kl = kl_to_standard_normal(q);
    if (grad) {
        grad->d_mu = -q.mu;
        grad->d_log_sigma = -(sigma.array().square() - 1.0).matrix();
    }
    if (X.rows() == 0) {
        t.elbo = -t.kl;
        if (grad) grad->terms = t;
        return t;
    }

    Vector lls(S);
    ForwardCache cache;
    Vector ll, dll;
    Vector g_theta(q.size());
    Vector theta(q.size());
    Matrix dout(1, X.rows());
    for (Eigen::Index s = 0; s < S; ++s) {
        theta = q.mu.array() + sigma.array() * noise.col(s).array();
        forward_cached(arch, layout, theta, X, cache);
        detail::loglik_terms(lik, y, cache.output.row(0).transpose(), ll, grad ? &dll : nullptr);
        lls[s] = ll_scale * ll.sum();
        if (grad) {
            dout.row(0) = dll.transpose();
            g_theta.setZero();
            backward_accumulate(arch, layout, theta, X, cache, dout, g_theta);
            const double w = ll_scale / static_cast<double>(S);
            grad->d_mu.noalias() += w * g_theta;
            grad->d_log_sigma.array() += w * g_theta.array() * noise.col(s).array() * sigma.array();
        }
    }
    t.ell = lls.mean();
    if (S > 1) {
        const double var = (lls.array() - t.ell).square().sum() / static_cast<double>(S - 1);
        t.ell_std_error = std::sqrt(var / static_cast<double>(S));
    }
    t.elbo = t.ell - t.kl;
    if (grad) grad->terms = t;
    return t;
}

inline ElboTerms elbo_estimate(const MeanFieldGaussian& q, const Architecture& arch,
                               const Dataset& data, const LikelihoodSpec& lik, int S, Rng& rng) {
    if (S < 1) throw DomainError("elbo_estimate: S must be >= 1");
    const Matrix noise = standard_normal(q.size(), S, rng);
    return elbo_with_noise(q, arch, data.X, data.y, lik, noise);
}

/// Pathwise gradient of [ll_scale * E log L - KL] with respect to (mu, log_sigma).
inline ElboGradient elbo_gradient(const MeanFieldGaussian& q, const Architecture& arch,
                                  const Dataset& batch, const LikelihoodSpec& lik, int S, Rng& rng,
                                  double ll_scale = 1.0) {
    if (S < 1) throw DomainError("elbo_gradient: S must be >= 1");
    const Matrix noise = standard_normal(q.size(), S, rng);
    ElboGradient g;
    elbo_with_noise(q, arch, batch.X, batch.y, lik, noise, ll_scale, &g);
    return g;
}

// --- initialisation and the optimal output bias ------------------------------

/// mu ~ N(0, 1); sigma^2 ~ InverseGamma(nu + 1, nu), so E[sigma^2] = 1.
inline MeanFieldGaussian init_variational(const Architecture& arch, double nu, Rng& rng) {
    if (!(nu > 1.0)) throw DomainError("init_variational: nu must be > 1");
    const auto n = param_count(arch);
    MeanFieldGaussian q;
    q.mu = standard_normal(n, rng);
    q.log_sigma.resize(n);
    std::gamma_distribution<double> gam(nu + 1.0, 1.0 / nu);  // shape, scale = 1/rate
    for (Eigen::Index i = 0; i < n; ++i) q.log_sigma[i] = -0.5 * std::log(gam(rng));
    return q;
}

struct BiasPosterior {
    double mu_b = 0.0;
    double sigma2_b = 1.0;
};

/// Optimal N(mu_b, sigma2_b) for the output bias when every other parameter
/// stays at the prior, under a Gaussian likelihood with variance sigma2.
inline BiasPosterior optimal_output_bias(const Vector& y, double sigma2) {
    if (y.size() == 0) throw DomainError("optimal_output_bias: empty target vector");
    if (!(sigma2 > 0.0)) throw DomainError("optimal_output_bias: sigma2 must be > 0");
    const double n = static_cast<double>(y.size());
    return {y.sum() / (n + sigma2), sigma2 / (n + sigma2)};
}

/// ELBO of the prior with only the output bias replaced by N(mu_b, sigma2_b).
/// `rest_second_moment_sum` is sum_n E_P[(f(x_n) - b)^2], which does not depend
/// on the bias; leave it at 0 when only differences matter.
inline double bias_only_elbo(double mu_b, double sigma2_b, const Vector& y, double sigma2,
                             double rest_second_moment_sum = 0.0) {
    if (!(sigma2_b > 0.0)) throw DomainError("bias_only_elbo: sigma2_b must be > 0");
    const double n = static_cast<double>(y.size());
    const double resid = (y.array() - mu_b).square().sum();
    return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) -
           (resid + n * sigma2_b + rest_second_moment_sum) / (2.0 * sigma2) -
           0.5 * (mu_b * mu_b + sigma2_b - 1.0 - std::log(sigma2_b));
}

// --- training -----------------------------------------------------------------

struct TrainConfig {
    long steps = 20000;
    int batch_size = 100;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    int mc_samples = 16;
    double grad_clip_norm = 10.0;
    long cosine_restart_period = 500;
    double init_nu = 100.0;
    std::uint64_t seed = 0;

    static TrainConfig desk() {
        TrainConfig c;
        c.steps = 5000;
        return c;
    }

    void validate() const {
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
        if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be > 0");
        if (cosine_restart_period < 1) throw ConfigError("cosine_restart_period must be >= 1");
        if (!(init_nu > 1.0)) throw ConfigError("init_nu must be > 1");
    }

    /// Learning rate at 0-based step t: cosine decay to 0 over each period, then restart.
    double lr_at(long t) const {
        const double phase = static_cast<double>(t % cosine_restart_period) /
                             static_cast<double>(cosine_restart_period);
        return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
    }
};

struct TrainRecord {
    long step = 0;
    double elbo = 0.0;
    double kl = 0.0;
    double ell = 0.0;
    double grad_norm = 0.0;  // before clipping
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<TrainRecord> records;

    bool empty() const { return records.empty(); }
    const TrainRecord& back() const { return records.back(); }

    void write_csv(std::ostream& os) const {
        os << "step,elbo,kl,ell,grad_norm,lr\n";
        os.precision(17);
        for (const auto& r : records)
            os << r.step << ',' << r.elbo << ',' << r.kl << ',' << r.ell << ',' << r.grad_norm << ','
               << r.lr << '\n';
    }
};

struct TrainResult {
    MeanFieldGaussian q;
    TrainHistory history;
};

/// SGD with momentum (v <- m v + g; theta <- theta - lr v) on -ELBO, global-norm
/// clipping, cosine-annealed learning rate with warm restarts.
/// Starts from `init` when given, else from init_variational(cfg.init_nu).
inline TrainResult train(const Architecture& arch, const Dataset& data, const LikelihoodSpec& lik,
                         const TrainConfig& cfg, const MeanFieldGaussian* init = nullptr) {
    cfg.validate();
    arch.validate();
    lik.validate();
    if (data.empty()) throw DomainError("train: dataset is empty");
    detail::check_regression_data(arch, data.X, data.y);

    Rng rng(derive_seed(cfg.seed, {0x747261696eULL}));
    TrainResult res;
    if (init) {
        init->check(arch);
        res.q = *init;
    } else {
        res.q = init_variational(arch, cfg.init_nu, rng);
    }
    MeanFieldGaussian& q = res.q;
    const Eigen::Index n_params = q.size();
    const Eigen::Index N = data.size();
    const Eigen::Index B = std::min<Eigen::Index>(cfg.batch_size, N);
    const bool full_batch = B == N;
    const double ll_scale = static_cast<double>(N) / static_cast<double>(B);

    Vector v_mu = Vector::Zero(n_params), v_ls = Vector::Zero(n_params);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(N));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Matrix Xb(B, data.dim());
    Vector yb(B);
    if (full_batch) {
        Xb = data.X;
        yb = data.y;
    }
    Matrix noise(n_params, cfg.mc_samples);
    ElboGradient g;
    res.history.records.reserve(static_cast<std::size_t>(cfg.steps));

    for (long t = 0; t < cfg.steps; ++t) {
        if (!full_batch) {
            // partial Fisher-Yates: first B entries are a uniform draw without replacement
            for (Eigen::Index i = 0; i < B; ++i) {
                std::uniform_int_distribution<Eigen::Index> pick(i, N - 1);
                std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
                Xb.row(i) = data.X.row(perm[static_cast<std::size_t>(i)]);
                yb[i] = data.y[perm[static_cast<std::size_t>(i)]];
            }
        }
        for (Eigen::Index j = 0; j < noise.cols(); ++j) fill_normal(noise.col(j), rng);
        elbo_with_noise(q, arch, Xb, yb, lik, noise, ll_scale, &g);

        const double gnorm = std::sqrt(g.squared_norm());
        if (!std::isfinite(g.terms.elbo) || !std::isfinite(gnorm))
            throw TrainingError("non-finite ELBO or gradient", t);
        const double clip = gnorm > cfg.grad_clip_norm ? cfg.grad_clip_norm / gnorm : 1.0;
        const double lr = cfg.lr_at(t);
        // ascent on the ELBO == descent on -ELBO
        v_mu = cfg.momentum * v_mu - clip * g.d_mu;
        v_ls = cfg.momentum * v_ls - clip * g.d_log_sigma;
        q.mu -= lr * v_mu;
        q.log_sigma -= lr * v_ls;

        res.history.records.push_back({t, g.terms.elbo, g.terms.kl, g.terms.ell, gnorm, lr});
    }
    if (!q.mu.allFinite() || !q.log_sigma.allFinite())
        throw TrainingError("variational parameters became non-finite", cfg.steps);
    return res;
}

// --- prediction -----------------------------------------------------------------

struct PredictiveMoments {
    Vector mean;
    Vector second_moment;
    Vector variance;
    Vector mean_se;
    Vector second_moment_se;
};

namespace detail {

inline PredictiveMoments summarize_draws(const Matrix& F) {  // S x N
    const auto S = static_cast<double>(F.rows());
    PredictiveMoments m;
    m.mean = F.colwise().mean().transpose();
    const Matrix F2 = F.array().square();
    m.second_moment = F2.colwise().mean().transpose();
    m.variance = (m.second_moment.array() - m.mean.array().square()).max(0.0);
    m.mean_se.resize(F.cols());
    m.second_moment_se.resize(F.cols());
    for (Eigen::Index i = 0; i < F.cols(); ++i) {
        const double v1 = (F.col(i).array() - m.mean[i]).square().sum() / (S - 1.0);
        const double v2 = (F2.col(i).array() - m.second_moment[i]).square().sum() / (S - 1.0);
        m.mean_se[i] = std::sqrt(v1 / S);
        m.second_moment_se[i] = std::sqrt(v2 / S);
    }
    return m;
}

}  // namespace detail

/// Monte-Carlo predictive mean / second moment / variance at each row of X.
/// With `tilde`, moments are of the output minus final bias and even-part shift.
inline PredictiveMoments predictive_moments(const MeanFieldGaussian& q, const Architecture& arch,
                                            const Matrix& X, int S, Rng& rng, bool tilde = false) {
    if (S < 2) throw DomainError("predictive_moments: S must be >= 2");
    if (arch.d_out != 1) throw ShapeError("predictive_moments expects d_out = 1");
    q.check(arch);
    Matrix F(S, X.rows());
    Vector eps(q.size());
    for (int s = 0; s < S; ++s) {
        fill_normal(eps, rng);
        const ParamVector theta = sample_reparam(q, eps);
        F.row(s) = (tilde ? forward_tilde(arch, theta, X) : forward(arch, theta, X)).col(0).transpose();
    }
    return detail::summarize_draws(F);
}

struct MeanGap {
    Vector diff;     // E_a f(x) - E_b f(x)
    Vector diff_se;  // standard error of the paired differences
};

/// Mean difference between two variational families using the same noise
/// draws for both (common random numbers).
inline MeanGap crn_mean_difference(const MeanFieldGaussian& a, const MeanFieldGaussian& b,
                                   const Architecture& arch, const Matrix& X, int S, Rng& rng,
                                   bool tilde = false) {
    if (S < 2) throw DomainError("crn_mean_difference: S must be >= 2");
    if (arch.d_out != 1) throw ShapeError("crn_mean_difference expects d_out = 1");
    a.check(arch);
    b.check(arch);
    Matrix D(S, X.rows());
    Vector eps(a.size());
    auto eval = [&](const ParamVector& th) -> Vector {
        return (tilde ? forward_tilde(arch, th, X) : forward(arch, th, X)).col(0);
    };
    for (int s = 0; s < S; ++s) {
        fill_normal(eps, rng);
        D.row(s) = (eval(sample_reparam(a, eps)) - eval(sample_reparam(b, eps))).transpose();
    }
    const auto m = detail::summarize_draws(D);
    return {m.mean, m.mean_se};
}

}  // namespace mfbnn
