#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "mfbnn/error.hpp"
#include "mfbnn/rng.hpp"

namespace mfbnn::stats {

/// Weighted least-squares fit constrained to be nondecreasing in index order
/// (pool-adjacent-violators).
inline std::vector<double> isotonic_fit(const std::vector<double>& y, const std::vector<double>& w = {}) {
    const std::size_t n = y.size();
    if (!w.empty() && w.size() != n) throw ShapeError("isotonic_fit: weight length mismatch");
    struct Block { double sum, weight; std::size_t count; };
    std::vector<Block> blocks;
    blocks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double wi = w.empty() ? 1.0 : w[i];
        blocks.push_back({wi * y[i], wi, 1});
        while (blocks.size() > 1) {
            const auto& b = blocks[blocks.size() - 1];
            const auto& a = blocks[blocks.size() - 2];
            if (a.sum / a.weight <= b.sum / b.weight) break;
            Block merged{a.sum + b.sum, a.weight + b.weight, a.count + b.count};
            blocks.pop_back();
            blocks.back() = merged;
        }
    }
    std::vector<double> fit;
    fit.reserve(n);
    for (const auto& b : blocks) fit.insert(fit.end(), b.count, b.sum / b.weight);
    return fit;
}

inline std::vector<double> antitonic_fit(const std::vector<double>& y, const std::vector<double>& w = {}) {
    std::vector<double> neg(y.size());
    std::transform(y.begin(), y.end(), neg.begin(), std::negate<>());
    auto f = isotonic_fit(neg, w);
    for (auto& v : f) v = -v;
    return f;
}

struct TrendResult {
    double sse_decreasing = 0.0;
    double sse_increasing = 0.0;
    double drop = 0.0;  // first minus last value of the decreasing fit
    bool decreasing() const { return sse_decreasing <= sse_increasing && drop >= 0.0; }
    bool increasing() const { return sse_increasing <= sse_decreasing && drop <= 0.0; }
};

/// Compares monotone fits of group means (one group per sweep position, e.g. width).
/// The direction whose constrained fit explains the data better wins.
inline TrendResult trend_test(const std::vector<std::vector<double>>& groups) {
    if (groups.empty()) throw DomainError("trend_test: no groups");
    std::vector<double> means, weights;
    for (const auto& g : groups) {
        if (g.empty()) throw DomainError("trend_test: empty group");
        means.push_back(std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size()));
        weights.push_back(static_cast<double>(g.size()));
    }
    const auto dec = antitonic_fit(means, weights);
    const auto inc = isotonic_fit(means, weights);
    TrendResult r;
    for (std::size_t i = 0; i < groups.size(); ++i)
        for (double v : groups[i]) {
            r.sse_decreasing += (v - dec[i]) * (v - dec[i]);
            r.sse_increasing += (v - inc[i]) * (v - inc[i]);
        }
    r.drop = dec.front() - dec.back();
    return r;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

inline double quantile(std::vector<double> v, double p) {
    if (v.empty()) throw DomainError("quantile of empty sample");
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1.0 - frac) + v[i + 1] * frac : v[i];
}

/// Percentile bootstrap interval for the mean.
inline Interval bootstrap_mean_ci(const std::vector<double>& x, Rng& rng, int replicates = 1000, double level = 0.95) {
    if (x.empty()) throw DomainError("bootstrap of empty sample");
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    std::vector<double> means(static_cast<std::size_t>(replicates));
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[pick(rng)];
        m = s / static_cast<double>(x.size());
    }
    const double a = 0.5 * (1.0 - level);
    return {quantile(means, a), quantile(means, 1.0 - a)};
}

/// sup_t |F_n(t) - F(t)|.
template <class Cdf>
double ks_statistic(std::vector<double> x, Cdf&& cdf) {
    if (x.empty()) throw DomainError("ks_statistic of empty sample");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double F = cdf(x[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
    }
    return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DomainError("ks_two_sample of empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double t = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= t) ++i;
        while (j < b.size() && b[j] <= t) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

/// Asymptotic critical value of the KS statistic: c(alpha) sqrt(1/n + 1/m),
/// c(alpha) = sqrt(-log(alpha / 2) / 2). Pass m = 0 for the one-sample test.
inline double ks_critical_value(double alpha, double n, double m = 0.0) {
    const double c = std::sqrt(-0.5 * std::log(0.5 * alpha));
    return c * std::sqrt(1.0 / n + (m > 0.0 ? 1.0 / m : 0.0));
}

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
    return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

}  // namespace mfbnn::stats
