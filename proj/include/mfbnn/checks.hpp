#pragma once

// Self-checks shared by the `verify` command.

#include <algorithm>
#include <cmath>

#include "mfbnn/mfvi.hpp"
#include "mfbnn/net.hpp"

namespace mfbnn {

struct GradientCheck {
    double max_rel_error = 0.0;
    Eigen::Index worst_index = -1;
};

/// Central differences of elbo_with_noise (fixed noise) against the pathwise
/// gradient, over every mu and log_sigma coordinate.
/// Relative error uses max(|analytic|, |numeric|, floor) as the denominator.
inline GradientCheck fd_gradient_check(const MeanFieldGaussian& q, const Architecture& arch, const Matrix& X,
                                       const Vector& y, const LikelihoodSpec& lik, const Matrix& noise,
                                       double h = 1e-5, double floor = 1e-3) {
    ElboGradient g;
    elbo_with_noise(q, arch, X, y, lik, noise, 1.0, &g);
    GradientCheck out;
    const Eigen::Index n = q.size();
    MeanFieldGaussian qp = q;
    for (Eigen::Index i = 0; i < 2 * n; ++i) {
        const bool is_mu = i < n;
        const Eigen::Index j = is_mu ? i : i - n;
        double& slot = is_mu ? qp.mu[j] : qp.log_sigma[j];
        const double orig = slot;
        slot = orig + h;
        const double up = elbo_with_noise(qp, arch, X, y, lik, noise).elbo;
        slot = orig - h;
        const double dn = elbo_with_noise(qp, arch, X, y, lik, noise).elbo;
        slot = orig;
        const double num = (up - dn) / (2.0 * h);
        const double ana = is_mu ? g.d_mu[j] : g.d_log_sigma[j];
        const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), floor});
        if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst_index = i;
        }
    }
    return out;
}

}  // namespace mfbnn
