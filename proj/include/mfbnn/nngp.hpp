#pragma once

// Infinite-width (NNGP) kernel of the network in net.hpp.
//   k^0(x, x') = 1 + <x, x'> / d_in
//   k^l(x, x') = 1 + E[phi(u) phi(v)],  (u, v) ~ N(0, k^{l-1} restricted to {x, x'})
// z_l has covariance k^{l-1}; the output has covariance k^L (without the
// leading 1 when the final bias is absent).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>

#include <Eigen/Dense>

#include "mfbnn/activation.hpp"
#include "mfbnn/error.hpp"
#include "mfbnn/net.hpp"
#include "mfbnn/quadrature.hpp"
#include "mfbnn/rng.hpp"

namespace mfbnn {

/// E[phi(sqrt(k) Z)^2].
inline double act_second_moment(const ActivationSpec& act, double k, int nodes = kDefaultQuadratureNodes) {
    if (!(k > 0.0)) throw DomainError("act_second_moment: k must be > 0");
    switch (act.kind) {
        case ActivationKind::identity: return k;
        case ActivationKind::relu: return 0.5 * k;
        case ActivationKind::erf: return 2.0 / std::numbers::pi * std::asin(2.0 * k / (1.0 + 2.0 * k));
        default: break;
    }
    const double a = std::sqrt(k);
    return expect_normal([&](double z) { const double v = act.value(a * z); return v * v; }, nodes);
}

/// E[phi(sqrt(k) Z)]. k = 0 gives phi(0).
inline double act_first_moment(const ActivationSpec& act, double k, int nodes = kDefaultQuadratureNodes) {
    if (!(k >= 0.0)) throw DomainError("act_first_moment: k must be >= 0");
    switch (act.kind) {
        case ActivationKind::identity:
        case ActivationKind::tanh:
        case ActivationKind::erf: return 0.0;
        case ActivationKind::sigmoid: return 0.5;
        case ActivationKind::relu: return std::sqrt(k) / std::sqrt(2.0 * std::numbers::pi);
    }
    return 0.0;
}

/// E[phi'(sqrt(k) Z)].
inline double act_derivative_moment(const ActivationSpec& act, double k, int nodes = kDefaultQuadratureNodes) {
    if (!(k >= 0.0)) throw DomainError("act_derivative_moment: k must be >= 0");
    switch (act.kind) {
        case ActivationKind::identity: return 1.0;
        case ActivationKind::relu: return 0.5;
        case ActivationKind::erf: return 2.0 * std::numbers::inv_sqrtpi / std::sqrt(1.0 + 2.0 * k);
        default: break;
    }
    const double a = std::sqrt(k);
    return expect_normal([&](double z) { return act.derivative(a * z); }, nodes);
}

/// E[phi(u) phi(v)] with (u, v) ~ N(0, [[k11, k12], [k12, k22]]).
inline double act_cross_moment(const ActivationSpec& act, double k11, double k12, double k22,
                               int nodes = kDefaultQuadratureNodes) {
    const double tol = 1e-12 * std::max({1.0, std::abs(k11), std::abs(k22)});
    if (k11 < -tol || k22 < -tol || k11 * k22 - k12 * k12 < -tol * std::max(1.0, k11 * k22))
        throw DomainError("act_cross_moment: covariance is not positive semidefinite");
    k11 = std::max(k11, 0.0);
    k22 = std::max(k22, 0.0);
    if (k12 == k11 && k12 == k22 && k11 > 0.0) return act_second_moment(act, k11, nodes);
    switch (act.kind) {
        case ActivationKind::identity: return k12;
        case ActivationKind::relu: {
            const double s = std::sqrt(k11 * k22);
            if (s == 0.0) return 0.0;
            const double c = std::clamp(k12 / s, -1.0, 1.0);
            const double th = std::acos(c);
            return s / (2.0 * std::numbers::pi) * (std::sin(th) + (std::numbers::pi - th) * c);
        }
        case ActivationKind::erf: {
            const double den = std::sqrt((1.0 + 2.0 * k11) * (1.0 + 2.0 * k22));
            return 2.0 / std::numbers::pi * std::asin(std::clamp(2.0 * k12 / den, -1.0, 1.0));
        }
        default: break;
    }
    return expect_bivariate_normal([&](double u, double v) { return act.value(u) * act.value(v); },
                                   k11, k12, k22, nodes);
}

struct NngpOptions {
    bool literal_input_kernel = false;  // k^0 = 1 + <x, x'> (no 1/d_in)
    int nodes = kDefaultQuadratureNodes;
};

struct KernelMatrix {
    Matrix entries;
    int layer = 0;  // which k^l; depth L for the output covariance
};

namespace detail {

inline double input_kernel(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                           const Eigen::Ref<const Eigen::RowVectorXd>& b, int d_in, const NngpOptions& o) {
    const double dot = a.dot(b);
    return 1.0 + (o.literal_input_kernel ? dot : dot / static_cast<double>(d_in));
}

}  // namespace detail

/// k^0(x,x), ..., k^L(x,x) at one input (the scalar diagonal recursion).
/// Entry L is the output variance, minus 1 when the final bias is absent.
inline Vector nngp_diag_recursion(const Architecture& arch, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                  const NngpOptions& o = {}) {
    arch.validate();
    if (x.size() != arch.d_in) throw ShapeError("nngp: input has the wrong dimension");
    Vector k(arch.depth + 1);
    k[0] = detail::input_kernel(x, x, arch.d_in, o);
    for (int l = 1; l <= arch.depth; ++l) {
        const double m = act_second_moment(arch.activation, k[l - 1], o.nodes);
        k[l] = (l == arch.depth && !arch.include_final_bias ? 0.0 : 1.0) + m;
    }
    return k;
}

inline double nngp_output_variance(const Architecture& arch, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                   const NngpOptions& o = {}) {
    return nngp_diag_recursion(arch, x, o)[arch.depth];
}

/// Output covariance between rows of X and rows of X2 (k^L with the output-bias rule).
inline KernelMatrix nngp_kernel(const Architecture& arch, const Matrix& X, const Matrix& X2,
                                const NngpOptions& o = {}) {
    arch.validate();
    if (X.cols() != arch.d_in || X2.cols() != arch.d_in)
        throw ShapeError("nngp_kernel: inputs must have d_in columns");
    Matrix D1(X.rows(), arch.depth + 1), D2(X2.rows(), arch.depth + 1);
    for (Eigen::Index i = 0; i < X.rows(); ++i) D1.row(i) = nngp_diag_recursion(arch, X.row(i), o).transpose();
    for (Eigen::Index j = 0; j < X2.rows(); ++j) D2.row(j) = nngp_diag_recursion(arch, X2.row(j), o).transpose();
    KernelMatrix K;
    K.layer = arch.depth;
    K.entries.resize(X.rows(), X2.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X2.rows(); ++j) {
            if (X.row(i) == X2.row(j)) {
                K.entries(i, j) = D1(i, arch.depth);
                continue;
            }
            double k12 = detail::input_kernel(X.row(i), X2.row(j), arch.d_in, o);
            for (int l = 1; l <= arch.depth; ++l) {
                const double m = act_cross_moment(arch.activation, D1(i, l - 1), k12, D2(j, l - 1), o.nodes);
                k12 = (l == arch.depth && !arch.include_final_bias ? 0.0 : 1.0) + m;
            }
            K.entries(i, j) = k12;
        }
    }
    return K;
}

inline KernelMatrix nngp_kernel(const Architecture& arch, const Matrix& X, const NngpOptions& o = {}) {
    KernelMatrix K = nngp_kernel(arch, X, X, o);
    K.entries = 0.5 * (K.entries + K.entries.transpose()).eval();
    return K;
}

inline void write_kernel_csv(std::ostream& os, const KernelMatrix& K) {
    os << "# layer=" << K.layer << '\n';
    for (Eigen::Index j = 0; j < K.entries.cols(); ++j) os << (j ? "," : "") << "c" << j;
    os << '\n';
    os.precision(17);
    for (Eigen::Index i = 0; i < K.entries.rows(); ++i) {
        for (Eigen::Index j = 0; j < K.entries.cols(); ++j) os << (j ? "," : "") << K.entries(i, j);
        os << '\n';
    }
}

struct GPPredictive {
    Vector mean;
    Vector variance;
    std::optional<Matrix> covariance;
    double jitter_used = 0.0;
};

/// GP regression predictive with Gaussian noise sigma2. K_cross is N_test x N_train.
/// Jitter starts at 1e-8 and grows x10 for up to three retries.
inline GPPredictive gp_posterior(const Matrix& K_train, const Matrix& K_cross, const Vector& K_test_diag,
                                 const Vector& y, double sigma2, const Matrix* K_test = nullptr) {
    if (!(sigma2 > 0.0)) throw DomainError("gp_posterior: sigma2 must be > 0");
    const Eigen::Index n = K_train.rows();
    if (K_train.cols() != n || y.size() != n || K_cross.cols() != n || K_test_diag.size() != K_cross.rows())
        throw ShapeError("gp_posterior: inconsistent shapes");
    if (K_test && (K_test->rows() != K_cross.rows() || K_test->cols() != K_cross.rows()))
        throw ShapeError("gp_posterior: K_test has the wrong shape");
    Matrix A = K_train;
    A.diagonal().array() += sigma2;
    double jitter = 1e-8;
    Eigen::LLT<Matrix> llt;
    for (int attempt = 0;; ++attempt) {
        Matrix Aj = A;
        Aj.diagonal().array() += jitter;
        llt.compute(Aj);
        if (llt.info() == Eigen::Success) break;
        if (attempt == 3)
            throw FactorizationError("gp_posterior: Cholesky failed with jitter up to " + std::to_string(jitter));
        jitter *= 10.0;
    }
    GPPredictive out;
    out.jitter_used = jitter;
    out.mean = K_cross * llt.solve(y);
    const Matrix V = llt.matrixL().solve(K_cross.transpose());  // n x n_test
    out.variance = (K_test_diag - V.colwise().squaredNorm().transpose()).array().max(0.0);
    if (K_test) out.covariance = *K_test - V.transpose() * V;
    return out;
}

/// lambda(x) = E[phi(z)], z ~ N(0, k^{L-1}(x, x)): the infinite-width mean of a
/// last-hidden-layer unit.
inline double lambda_fn(const Architecture& arch, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                        const NngpOptions& o = {}) {
    const Vector k = nngp_diag_recursion(arch, x, o);
    return act_first_moment(arch.activation, k[arch.depth - 1], o.nodes);
}

struct McEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
};

/// Finite-width lambda_M(x) = E_P[phi(z_{L,1}(x))]. Each prior draw contributes
/// the average over all M exchangeable units.
inline McEstimate lambda_M_mc(const Architecture& arch, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                              int S, Rng& rng) {
    if (S < 2) throw DomainError("lambda_M_mc: S must be >= 2");
    const ParamLayout layout(arch);
    Matrix X = x;
    ForwardCache cache;
    Vector draws(S);
    for (int s = 0; s < S; ++s) {
        const ParamVector theta = sample_prior(arch, rng);
        forward_cached(arch, layout, theta, X, cache);
        draws[s] = cache.post.back().mean();
    }
    McEstimate e;
    e.estimate = draws.mean();
    e.std_error = std::sqrt((draws.array() - e.estimate).square().sum() / (S - 1.0) / S);
    return e;
}

}  // namespace mfbnn
