#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "mfbnn/error.hpp"

namespace mfbnn {

/// Nodes and weights with sum_i w_i g(z_i) ~ E[g(Z)], Z ~ N(0, 1).
struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

// Newton iteration on the orthonormal Hermite recurrence (Golub–Welsch would also do).
inline GaussHermiteRule build_gauss_hermite(int n) {
    if (n < 1) throw DomainError("Gauss-Hermite rule needs at least one node");
    std::vector<double> x(n), w(n);
    const double pim4 = std::pow(std::numbers::pi, -0.25);
    const int m = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
        else if (i == 1)
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * x[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * x[1];
        else
            z = 2.0 * z - x[i - 2];
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    GaussHermiteRule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        r.nodes[i] = std::numbers::sqrt2 * x[i];
        r.weights[i] = w[i] * std::numbers::inv_sqrtpi;
    }
    return r;
}

/// Composite rule for E[g(Z)]: 8-point Gauss-Legendre panels on [-10, 10] with the
/// normal density folded into the weights. Gauss-Hermite loses accuracy once
/// tanh(sqrt(k) z) has poles close to the real axis (3e-3 error at k = 10 with 64
/// nodes); short panels do not care.
inline GaussHermiteRule build_normal_panels(int n) {
    if (n < 8) throw DomainError("quadrature rule needs at least 8 nodes");
    static constexpr double gx[4] = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267,
                                     0.9602898564975363};
    static constexpr double gw[4] = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745,
                                     0.1012285362903763};
    const int panels = (n + 7) / 8;
    const double lo = -10.0, h = 20.0 / panels;
    GaussHermiteRule r;
    for (int p = 0; p < panels; ++p) {
        const double c = lo + (p + 0.5) * h;
        for (int i = 0; i < 4; ++i)
            for (double sgn : {-1.0, 1.0}) {
                const double z = c + sgn * 0.5 * h * gx[i];
                r.nodes.push_back(z);
                r.weights.push_back(0.5 * h * gw[i] * std::exp(-0.5 * z * z) * 0.5 * std::numbers::inv_sqrtpi *
                                    std::numbers::sqrt2);
            }
    }
    return r;
}

}  // namespace detail

inline constexpr int kDefaultQuadratureNodes = 400;

/// Cached Gauss-Hermite rule; safe to call from several threads.
inline const GaussHermiteRule& gauss_hermite(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussHermiteRule>(detail::build_gauss_hermite(n));
    return *slot;
}

/// Cached panel rule used by expect_normal; `n` is rounded up to a multiple of 8.
inline const GaussHermiteRule& normal_rule(int n = kDefaultQuadratureNodes) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussHermiteRule>(detail::build_normal_panels(n));
    return *slot;
}

/// E[g(Z)], Z ~ N(0, 1).
template <class F>
double expect_normal(F&& g, int n = kDefaultQuadratureNodes) {
    const auto& r = normal_rule(n);
    double s = 0.0;
    for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * g(r.nodes[i]);
    return s;
}

/// E[g(U, V)] for (U, V) centred Gaussian with covariance [[k11, k12], [k12, k22]].
/// Caller is responsible for checking positive semidefiniteness.
template <class F>
double expect_bivariate_normal(F&& g, double k11, double k12, double k22,
                               int n = kDefaultQuadratureNodes) {
    const auto& r = normal_rule(n);
    const double a = std::sqrt(std::max(k11, 0.0));
    const double c = a > 0.0 ? k12 / a : 0.0;
    const double d = std::sqrt(std::max(k22 - c * c, 0.0));
    double s = 0.0;
    for (std::size_t i = 0; i < r.nodes.size(); ++i) {
        const double u = a * r.nodes[i];
        double inner = 0.0;
        for (std::size_t j = 0; j < r.nodes.size(); ++j)
            inner += r.weights[j] * g(u, c * r.nodes[i] + d * r.nodes[j]);
        s += r.weights[i] * inner;
    }
    return s;
}

}  // namespace mfbnn
