#pragma once

// Fully connected network in NTK parameterization:
//   z_1 = W_1 x / sqrt(d_in) + b_1
//   z_l = W_l phi(z_{l-1}) / sqrt(M) + b_l          l = 2..L
//   f   = W_{L+1} phi(z_L) / sqrt(M) [+ b_{L+1}]
// Parameters live in one flat vector, row-major per weight matrix, ordered
// W_1, b_1, W_2, b_2, ..., W_{L+1}[, b_{L+1}].

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "mfbnn/activation.hpp"
#include "mfbnn/error.hpp"
#include "mfbnn/rng.hpp"

namespace mfbnn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ParamVector = Eigen::VectorXd;

struct Architecture {
    int depth = 1;  // L, number of hidden layers
    int width = 1;  // M
    int d_in = 1;
    int d_out = 1;
    ActivationSpec activation;  // defaults to tanh
    bool include_final_bias = true;

    void validate() const {
        if (depth < 1 || width < 1 || d_in < 1 || d_out < 1)
            throw ConfigError("architecture requires depth, width, d_in, d_out >= 1");
    }

    Architecture with_width(int m) const {
        Architecture a = *this;
        a.width = m;
        return a;
    }
};

/// Offsets of each weight/bias segment inside the flat parameter vector.
/// Layers are 1-based: layer 1 is the input layer, layer L+1 the output.
class ParamLayout {
public:
    struct Segment {
        Eigen::Index offset = 0;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;  // 1 for biases
        Eigen::Index size() const { return rows * cols; }
    };

    explicit ParamLayout(const Architecture& arch) : depth_(arch.depth) {
        arch.validate();
        Eigen::Index off = 0;
        weights_.resize(arch.depth + 2);
        biases_.resize(arch.depth + 2);
        for (int l = 1; l <= arch.depth + 1; ++l) {
            const Eigen::Index rows = (l == arch.depth + 1) ? arch.d_out : arch.width;
            const Eigen::Index cols = (l == 1) ? arch.d_in : arch.width;
            weights_[l] = {off, rows, cols};
            off += rows * cols;
            if (l <= arch.depth || arch.include_final_bias) {
                biases_[l] = {off, rows, 1};
                off += rows;
            } else {
                biases_[l] = {off, 0, 1};
            }
        }
        total_ = off;
    }

    const Segment& weight(int layer) const { return weights_.at(layer); }
    const Segment& bias(int layer) const { return biases_.at(layer); }
    bool has_bias(int layer) const { return bias(layer).rows > 0; }
    int num_layers() const { return depth_ + 1; }
    Eigen::Index size() const { return total_; }

private:
    int depth_;
    std::vector<Segment> weights_;
    std::vector<Segment> biases_;
    Eigen::Index total_ = 0;
};

inline Eigen::Index param_count(const Architecture& arch) { return ParamLayout(arch).size(); }

struct LayerParams {
    Matrix W;
    Vector b;  // empty for an absent final bias
};

inline std::vector<LayerParams> unpack(const Architecture& arch, const ParamVector& theta) {
    const ParamLayout layout(arch);
    if (theta.size() != layout.size()) throw ShapeError("parameter vector has wrong length");
    std::vector<LayerParams> out(layout.num_layers());
    for (int l = 1; l <= layout.num_layers(); ++l) {
        const auto& w = layout.weight(l);
        out[l - 1].W = Eigen::Map<const RowMatrix>(theta.data() + w.offset, w.rows, w.cols);
        const auto& b = layout.bias(l);
        out[l - 1].b = theta.segment(b.offset, b.rows);
    }
    return out;
}

inline ParamVector pack(const Architecture& arch, const std::vector<LayerParams>& layers) {
    const ParamLayout layout(arch);
    if (static_cast<int>(layers.size()) != layout.num_layers())
        throw ShapeError("pack: wrong number of layers");
    ParamVector theta(layout.size());
    for (int l = 1; l <= layout.num_layers(); ++l) {
        const auto& w = layout.weight(l);
        const auto& b = layout.bias(l);
        const auto& lp = layers[l - 1];
        if (lp.W.rows() != w.rows || lp.W.cols() != w.cols || lp.b.size() != b.rows)
            throw ShapeError("pack: segment shape mismatch at layer " + std::to_string(l));
        Eigen::Map<RowMatrix>(theta.data() + w.offset, w.rows, w.cols) = lp.W;
        theta.segment(b.offset, b.rows) = lp.b;
    }
    return theta;
}

namespace detail {

inline Eigen::Map<const RowMatrix> weight_map(const ParamLayout& layout, const ParamVector& theta,
                                               int l) {
    const auto& s = layout.weight(l);
    return Eigen::Map<const RowMatrix>(theta.data() + s.offset, s.rows, s.cols);
}

inline void apply_activation(const ActivationSpec& act, const Matrix& z, Matrix& h) {
    h.resize(z.rows(), z.cols());
    switch (act.kind) {
        case ActivationKind::tanh: h = z.array().tanh(); break;
        case ActivationKind::relu: h = z.array().max(0.0); break;
        case ActivationKind::identity: h = z; break;
        case ActivationKind::sigmoid: h = 0.5 + 0.5 * (0.5 * z.array()).tanh(); break;
        case ActivationKind::erf: h = z.unaryExpr([](double v) { return std::erf(v); }); break;
    }
}

}  // namespace detail

/// Pre- and post-activations of every hidden layer for a batch of inputs,
/// stored column-per-input (M x N).
struct ForwardCache {
    std::vector<Matrix> pre;   // z_1..z_L
    std::vector<Matrix> post;  // phi(z_1)..phi(z_L)
    Matrix output;             // d_out x N
};

inline void forward_cached(const Architecture& arch, const ParamLayout& layout,
                           const ParamVector& theta, const Matrix& X, ForwardCache& cache) {
    if (X.cols() != arch.d_in)
        throw ShapeError("input has " + std::to_string(X.cols()) + " columns, expected " +
                         std::to_string(arch.d_in));
    if (theta.size() != layout.size()) throw ShapeError("parameter vector has wrong length");
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(arch.d_in));
    const double hid_scale = 1.0 / std::sqrt(static_cast<double>(arch.width));
    cache.pre.resize(arch.depth);
    cache.post.resize(arch.depth);
    for (int l = 1; l <= arch.depth; ++l) {
        const auto W = detail::weight_map(layout, theta, l);
        const auto& bs = layout.bias(l);
        const auto b = theta.segment(bs.offset, bs.rows);
        Matrix& z = cache.pre[l - 1];
        if (l == 1)
            z.noalias() = in_scale * (W * X.transpose());
        else
            z.noalias() = hid_scale * (W * cache.post[l - 2]);
        z.colwise() += b;
        detail::apply_activation(arch.activation, z, cache.post[l - 1]);
    }
    const int out = arch.depth + 1;
    const auto W = detail::weight_map(layout, theta, out);
    cache.output.noalias() = hid_scale * (W * cache.post.back());
    if (layout.has_bias(out)) {
        const auto& bs = layout.bias(out);
        cache.output.colwise() += theta.segment(bs.offset, bs.rows);
    }
}

/// Network output for each row of X; returns N x d_out.
inline Matrix forward(const Architecture& arch, const ParamVector& theta, const Matrix& X) {
    const ParamLayout layout(arch);
    ForwardCache cache;
    forward_cached(arch, layout, theta, X, cache);
    return cache.output.transpose();
}

/// Output with the final bias and the even-part contribution
/// (alpha / sqrt(M)) W_{L+1} 1 removed.
inline Matrix forward_tilde(const Architecture& arch, const ParamVector& theta, const Matrix& X) {
    if (!arch.activation.is_odd_plus_constant)
        throw DomainError("no odd decomposition with constant even part");
    const ParamLayout layout(arch);
    ForwardCache cache;
    forward_cached(arch, layout, theta, X, cache);
    const int out = arch.depth + 1;
    Vector shift = Vector::Zero(arch.d_out);
    const double alpha = arch.activation.even_part();
    if (alpha != 0.0)
        shift += alpha / std::sqrt(static_cast<double>(arch.width)) *
                 detail::weight_map(layout, theta, out).rowwise().sum();
    if (layout.has_bias(out)) shift += theta.segment(layout.bias(out).offset, arch.d_out);
    cache.output.colwise() -= shift;
    return cache.output.transpose();
}

/// Reverse-mode pass. `dout` is d(loss)/d(output), d_out x N. Accumulates
/// d(loss)/d(theta) into `grad` (which must already have the right length).
inline void backward_accumulate(const Architecture& arch, const ParamLayout& layout,
                                const ParamVector& theta, const Matrix& X,
                                const ForwardCache& cache, const Matrix& dout,
                                Eigen::Ref<Vector> grad) {
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(arch.d_in));
    const double hid_scale = 1.0 / std::sqrt(static_cast<double>(arch.width));
    const int out = arch.depth + 1;
    {
        const auto& ws = layout.weight(out);
        Eigen::Map<RowMatrix>(grad.data() + ws.offset, ws.rows, ws.cols).noalias() +=
            hid_scale * (dout * cache.post.back().transpose());
        if (layout.has_bias(out))
            grad.segment(layout.bias(out).offset, arch.d_out) += dout.rowwise().sum();
    }
    Matrix delta = hid_scale * (detail::weight_map(layout, theta, out).transpose() * dout);
    for (int l = arch.depth; l >= 1; --l) {
        const Matrix& z = cache.pre[l - 1];
        switch (arch.activation.kind) {
            case ActivationKind::identity: break;
            case ActivationKind::relu:
                delta.array() *= (z.array() > 0.0).cast<double>();
                break;
            case ActivationKind::tanh:
                delta.array() *= 1.0 - cache.post[l - 1].array().square();
                break;
            case ActivationKind::sigmoid: {
                // h = 0.5 + 0.5 t  =>  h' = 0.25 (1 - t^2) = h (1 - h)
                const auto& h = cache.post[l - 1].array();
                delta.array() *= h * (1.0 - h);
                break;
            }
            case ActivationKind::erf:
                delta.array() *= 2.0 * std::numbers::inv_sqrtpi * (-z.array().square()).exp();
                break;
        }
        const auto& ws = layout.weight(l);
        auto gW = Eigen::Map<RowMatrix>(grad.data() + ws.offset, ws.rows, ws.cols);
        if (l == 1)
            gW.noalias() += in_scale * (delta * X);
        else
            gW.noalias() += hid_scale * (delta * cache.post[l - 2].transpose());
        grad.segment(layout.bias(l).offset, arch.width) += delta.rowwise().sum();
        if (l > 1) delta = hid_scale * (detail::weight_map(layout, theta, l).transpose() * delta);
    }
}

/// theta ~ N(0, I).
inline ParamVector sample_prior(const Architecture& arch, Rng& rng) {
    return standard_normal(param_count(arch), rng);
}

}  // namespace mfbnn
