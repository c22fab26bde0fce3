#include <gtest/gtest.h>

#include <cmath>

#include "mfbnn/activation.hpp"
#include "mfbnn/net.hpp"
#include "mfbnn/rng.hpp"

using namespace mfbnn;

namespace {

Architecture make_arch(int L, int M, int d_in, ActivationKind k, bool final_bias = true) {
    Architecture a;
    a.depth = L;
    a.width = M;
    a.d_in = d_in;
    a.activation = ActivationSpec::make(k);
    a.include_final_bias = final_bias;
    return a;
}

}  // namespace

TEST(Activation, ParseAndProperties) {
    EXPECT_EQ(parse_activation("linear"), ActivationKind::identity);
    EXPECT_EQ(parse_activation("erf"), ActivationKind::erf);
    EXPECT_THROW(parse_activation("swish"), ConfigError);

    const auto sig = ActivationSpec::make(ActivationKind::sigmoid);
    EXPECT_DOUBLE_EQ(sig.even_part(), 0.5);
    EXPECT_DOUBLE_EQ(sig.lipschitz, 0.25);
    EXPECT_NEAR(sig(0.7), 1.0 / (1.0 + std::exp(-0.7)), 1e-15);
    const auto relu = ActivationSpec::make(ActivationKind::relu);
    EXPECT_FALSE(relu.is_odd_plus_constant);
    EXPECT_EQ(relu.derivative(0.0), 0.0);
    EXPECT_NEAR(ActivationSpec::make(ActivationKind::erf).lipschitz, 2.0 / std::sqrt(M_PI), 1e-15);
}

TEST(Activation, DerivativesMatchDifferences) {
    for (auto k : {ActivationKind::tanh, ActivationKind::erf, ActivationKind::sigmoid, ActivationKind::identity,
                   ActivationKind::relu}) {
        const auto a = ActivationSpec::make(k);
        for (double z : {-2.3, -0.4, 0.3, 1.7}) {
            const double h = 1e-6;
            EXPECT_NEAR(a.derivative(z), (a(z + h) - a(z - h)) / (2 * h), 1e-8) << to_string(k) << " z=" << z;
        }
    }
}

TEST(Activation, OddPlusConstant) {
    for (auto k : {ActivationKind::tanh, ActivationKind::erf, ActivationKind::sigmoid, ActivationKind::identity}) {
        const auto a = ActivationSpec::make(k);
        for (double z : {0.1, 0.9, 3.0})
            EXPECT_NEAR(a(z) - a.even_part(), -(a(-z) - a.even_part()), 1e-14) << to_string(k);
    }
}

TEST(Layout, ParamCounts) {
    EXPECT_EQ(param_count(make_arch(1, 1, 1, ActivationKind::tanh)), 4);
    EXPECT_EQ(param_count(make_arch(2, 3, 2, ActivationKind::tanh)), 25);
    EXPECT_EQ(param_count(make_arch(1, 2, 1, ActivationKind::tanh, false)), 6);
}

TEST(Layout, SegmentsAreContiguousRowMajor) {
    const auto a = make_arch(2, 3, 2, ActivationKind::tanh);
    const ParamLayout lay(a);
    EXPECT_EQ(lay.weight(1).offset, 0);
    EXPECT_EQ(lay.bias(1).offset, 6);
    EXPECT_EQ(lay.weight(2).offset, 9);
    EXPECT_EQ(lay.bias(2).offset, 18);
    EXPECT_EQ(lay.weight(3).offset, 21);
    EXPECT_EQ(lay.bias(3).offset, 24);

    Rng rng(3);
    const Vector theta = standard_normal(25, rng);
    const auto layers = unpack(a, theta);
    EXPECT_DOUBLE_EQ(layers[0].W(1, 0), theta[2]);  // row 1, col 0 of a 3x2 block
    EXPECT_TRUE(pack(a, layers).isApprox(theta, 0.0));
}

TEST(Forward, IdentityHandValues) {
    auto a = make_arch(1, 1, 1, ActivationKind::identity);
    Vector theta(4);
    theta << 1, 0, 1, 0;
    Matrix X(3, 1);
    X << -2, 0.5, 3;
    EXPECT_TRUE(forward(a, theta, X).col(0).isApprox(X.col(0)));

    a.width = 4;
    theta = Vector::Zero(param_count(a));
    theta.segment(0, 4).setOnes();   // W1
    theta.segment(8, 4).setOnes();   // W2
    EXPECT_NEAR(forward(a, theta, Matrix::Ones(1, 1))(0, 0), 2.0, 1e-15);

    theta[12] = 3.0;  // final bias
    EXPECT_NEAR(forward_tilde(a, theta, Matrix::Ones(1, 1))(0, 0), forward(a, theta, Matrix::Ones(1, 1))(0, 0) - 3.0,
                1e-15);
}

TEST(Forward, HandComputedTwoLayerTanh) {
    const auto a = make_arch(2, 2, 2, ActivationKind::tanh);
    Rng rng(11);
    const Vector t = standard_normal(param_count(a), rng);
    const double x0 = 0.3, x1 = -1.2;
    // written out by hand from the layout: W1 (2x2), b1, W2 (2x2), b2, W3 (1x2), b3
    double z1[2], z2[2];
    for (int i = 0; i < 2; ++i) z1[i] = (t[2 * i] * x0 + t[2 * i + 1] * x1) / std::sqrt(2.0) + t[4 + i];
    for (int i = 0; i < 2; ++i)
        z2[i] = (t[6 + 2 * i] * std::tanh(z1[0]) + t[7 + 2 * i] * std::tanh(z1[1])) / std::sqrt(2.0) + t[10 + i];
    const double f = (t[12] * std::tanh(z2[0]) + t[13] * std::tanh(z2[1])) / std::sqrt(2.0) + t[14];
    Matrix X(1, 2);
    X << x0, x1;
    EXPECT_NEAR(forward(a, t, X)(0, 0), f, 1e-14);
}

TEST(Forward, ReluDeadPathsGiveBias) {
    auto a = make_arch(1, 5, 1, ActivationKind::relu);
    Rng rng(5);
    Vector theta = standard_normal(param_count(a), rng);
    const ParamLayout lay(a);
    theta.segment(lay.weight(1).offset, 5).setConstant(1.0);
    theta.segment(lay.bias(1).offset, 5).setConstant(-10.0);
    EXPECT_DOUBLE_EQ(forward(a, theta, Matrix::Constant(1, 1, 2.0))(0, 0), theta[lay.bias(2).offset]);
    EXPECT_THROW(forward_tilde(a, theta, Matrix::Ones(1, 1)), DomainError);
}

TEST(Forward, TildeVariants) {
    auto a = make_arch(1, 6, 1, ActivationKind::tanh);
    Rng rng(8);
    Vector theta = standard_normal(param_count(a), rng);
    theta[theta.size() - 1] = 0.0;
    const Matrix X = standard_normal(4, 1, rng);
    EXPECT_TRUE(forward_tilde(a, theta, X).isApprox(forward(a, theta, X), 1e-15));

    a.activation = ActivationSpec::make(ActivationKind::sigmoid);
    const ParamLayout lay(a);
    Vector s = Vector::Zero(param_count(a));
    s.segment(lay.weight(2).offset, 6).setOnes();
    s[lay.bias(2).offset] = 1.5;
    EXPECT_NEAR(forward(a, s, X)(2, 0), std::sqrt(6.0) * 0.5 + 1.5, 1e-14);
    EXPECT_NEAR(forward_tilde(a, s, X)(2, 0), 0.0, 1e-14);
}

TEST(Forward, ShapeErrors) {
    const auto a = make_arch(1, 3, 2, ActivationKind::tanh);
    EXPECT_THROW(forward(a, Vector::Zero(param_count(a)), Matrix::Zero(2, 3)), ShapeError);
    EXPECT_THROW(forward(a, Vector::Zero(3), Matrix::Zero(2, 2)), ShapeError);
    Architecture bad = a;
    bad.width = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Prior, MomentsAndDeterminism) {
    auto a = make_arch(2, 200, 3, ActivationKind::tanh);
    Rng r1(42), r2(42);
    const Vector t1 = sample_prior(a, r1), t2 = sample_prior(a, r2);
    EXPECT_TRUE((t1.array() == t2.array()).all());
    Rng big(7);
    const Vector z = standard_normal(100000, big);
    EXPECT_NEAR(z.mean(), 0.0, 0.01);
    EXPECT_NEAR((z.array() - z.mean()).square().mean(), 1.0, 0.02);
}

TEST(Rng, DerivedSeedsDiffer) {
    EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
    EXPECT_EQ(derive_seed(9, {4}), derive_seed(9, {4}));
}
