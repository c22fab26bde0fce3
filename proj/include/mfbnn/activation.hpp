#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "mfbnn/error.hpp"

namespace mfbnn {

enum class ActivationKind { tanh, erf, relu, identity, sigmoid };

inline std::string_view to_string(ActivationKind k) {
    switch (k) {
        case ActivationKind::tanh: return "tanh";
        case ActivationKind::erf: return "erf";
        case ActivationKind::relu: return "relu";
        case ActivationKind::identity: return "identity";
        case ActivationKind::sigmoid: return "sigmoid";
    }
    return "?";
}

inline ActivationKind parse_activation(std::string_view name) {
    if (name == "tanh") return ActivationKind::tanh;
    if (name == "erf") return ActivationKind::erf;
    if (name == "relu") return ActivationKind::relu;
    if (name == "identity" || name == "linear") return ActivationKind::identity;
    if (name == "sigmoid") return ActivationKind::sigmoid;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

/// Pointwise nonlinearity plus the metadata the bound theorems need.
///
/// `alpha` is the constant even part phi_e, present only for activations of
/// the form odd + constant. Sigmoid is evaluated as 0.5 + 0.5 tanh(z/2) so that
/// its odd part is exactly 0.5 tanh(z/2).
struct ActivationSpec {
    ActivationKind kind = ActivationKind::tanh;
    std::optional<double> alpha = 0.0;
    double lipschitz = 1.0;
    bool is_odd_plus_constant = true;

    static ActivationSpec make(ActivationKind k) {
        ActivationSpec a;
        a.kind = k;
        switch (k) {
            case ActivationKind::tanh:
            case ActivationKind::identity:
                a.alpha = 0.0;
                a.lipschitz = 1.0;
                a.is_odd_plus_constant = true;
                break;
            case ActivationKind::erf:
                a.alpha = 0.0;
                a.lipschitz = 2.0 * std::numbers::inv_sqrtpi;  // sup |erf'| = erf'(0)
                a.is_odd_plus_constant = true;
                break;
            case ActivationKind::sigmoid:
                a.alpha = 0.5;
                a.lipschitz = 0.25;
                a.is_odd_plus_constant = true;
                break;
            case ActivationKind::relu:
                a.alpha.reset();
                a.lipschitz = 1.0;
                a.is_odd_plus_constant = false;
                break;
        }
        return a;
    }

    static ActivationSpec make(std::string_view name) { return make(parse_activation(name)); }

    double operator()(double z) const { return value(z); }

    double value(double z) const {
        switch (kind) {
            case ActivationKind::tanh: return std::tanh(z);
            case ActivationKind::erf: return std::erf(z);
            case ActivationKind::relu: return z > 0.0 ? z : 0.0;
            case ActivationKind::identity: return z;
            case ActivationKind::sigmoid: return 0.5 + 0.5 * std::tanh(0.5 * z);
        }
        return 0.0;
    }

    // relu'(0) is taken as 0.
    double derivative(double z) const {
        switch (kind) {
            case ActivationKind::tanh: {
                const double t = std::tanh(z);
                return 1.0 - t * t;
            }
            case ActivationKind::erf: return 2.0 * std::numbers::inv_sqrtpi * std::exp(-z * z);
            case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
            case ActivationKind::identity: return 1.0;
            case ActivationKind::sigmoid: {
                const double t = std::tanh(0.5 * z);
                return 0.25 * (1.0 - t * t);
            }
        }
        return 0.0;
    }

    double even_part() const {
        if (!alpha) throw DomainError("no odd decomposition with constant even part");
        return *alpha;
    }
};

}  // namespace mfbnn
