#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace mfbnn {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for an independent stream identified by (base, k0, k1, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = splitmix64(base);
    for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

inline void fill_normal(Eigen::Ref<Eigen::VectorXd> out, Rng& rng) {
    std::normal_distribution<double> n01;
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = n01(rng);
}

inline Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng) {
    Eigen::VectorXd v(n);
    fill_normal(v, rng);
    return v;
}

inline Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    std::normal_distribution<double> n01;
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
    return m;
}

}  // namespace mfbnn
