#include <gtest/gtest.h>

#include <random>

#include "../common/oracles.hpp"
#include "uavckm.hpp"

using namespace uavckm;
using nn::Matrix;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Weighted-sum loss makes the upstream gradient equal to `w`.
template <class F>
double weighted(F&& f, const Matrix& w) {
    return (f().array() * w.array()).sum();
}

} // namespace

TEST(Gradients, Dense) {
    std::mt19937_64 rng(1);
    nn::Dense d(5, 4, rng);
    Matrix x = random_matrix(5, 7, rng);
    const Matrix w = random_matrix(4, 7, rng);
    std::vector<nn::ParamRef> p;
    d.collect("d", p);
    EXPECT_LT(oracle::max_gradient_error(p, [&] { return weighted([&] { return d.forward(x); }, w); },
                                         [&] { d.forward(x); d.backward(w); }, 20),
              1e-4);
    d.forward(x);
    const Matrix dx = d.backward(w);
    EXPECT_LT(oracle::max_input_gradient_error(x, [&] { return weighted([&] { return d.forward(x); }, w); }, dx), 1e-4);
}

TEST(Gradients, Activations) {
    std::mt19937_64 rng(2);
    Matrix x = random_matrix(6, 5, rng);
    const Matrix w = random_matrix(6, 5, rng);
    nn::Relu relu;
    relu.forward(x);
    const Matrix dr = relu.backward(w);
    EXPECT_LT(oracle::max_input_gradient_error(x, [&] { return weighted([&] { return relu.forward(x); }, w); }, dr), 1e-4);
    nn::Tanh th;
    th.forward(x);
    const Matrix dt = th.backward(w);
    EXPECT_LT(oracle::max_input_gradient_error(x, [&] { return weighted([&] { return th.forward(x); }, w); }, dt), 1e-4);
}

TEST(Gradients, BatchNormTraining) {
    std::mt19937_64 rng(3);
    nn::BatchNorm bn(4);
    Matrix x = random_matrix(4, 9, rng) * 3.0;
    const Matrix w = random_matrix(4, 9, rng);
    std::vector<nn::ParamRef> p;
    bn.collect("bn", p);
    // Move gamma/beta off their defaults so every term is exercised.
    p[0].value->setConstant(1.3);
    p[1].value->setConstant(-0.4);
    EXPECT_LT(oracle::max_gradient_error(p, [&] { return weighted([&] { return bn.forward(x, true); }, w); },
                                         [&] { bn.forward(x, true); bn.backward(w); }),
              1e-4);
    bn.forward(x, true);
    const Matrix dx = bn.backward(w);
    EXPECT_LT(oracle::max_input_gradient_error(x, [&] { return weighted([&] { return bn.forward(x, true); }, w); }, dx), 1e-4);
}

TEST(Gradients, BatchNormInference) {
    std::mt19937_64 rng(4);
    nn::BatchNorm bn(3);
    for (int i = 0; i < 20; ++i) bn.forward(random_matrix(3, 16, rng) * 2.0 + Matrix::Constant(3, 16, 1.0), true);
    Matrix x = random_matrix(3, 5, rng);
    const Matrix w = random_matrix(3, 5, rng);
    bn.forward(x, false);
    const Matrix dx = bn.backward(w);
    EXPECT_LT(oracle::max_input_gradient_error(x, [&] { return weighted([&] { return bn.forward(x, false); }, w); }, dx), 1e-4);
    // Inference output uses the running statistics, so it matches infer().
    EXPECT_LT((bn.forward(x, false) - bn.infer(x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gradients, ResidualBlockAndNetwork) {
    std::mt19937_64 rng(5);
    nn::ResidualBlock block(6, rng);
    Matrix x = random_matrix(6, 8, rng);
    const Matrix w = random_matrix(6, 8, rng);
    std::vector<nn::ParamRef> p;
    block.collect("b", p);
    EXPECT_LT(oracle::max_gradient_error(p, [&] { return weighted([&] { return block.forward(x, true); }, w); },
                                         [&] { block.forward(x, true); block.backward(w); }),
              1e-4);
    block.forward(x, true);
    const Matrix dx = block.backward(w);
    EXPECT_LT(oracle::max_input_gradient_error(x, [&] { return weighted([&] { return block.forward(x, true); }, w); }, dx), 1e-4);

    nn::ResMlp net(7, 10, 3, rng);
    Matrix xi = random_matrix(7, 12, rng);
    const Matrix wi = random_matrix(1, 12, rng);
    EXPECT_LT(oracle::max_gradient_error(net.params(), [&] { return weighted([&] { return net.forward(xi, true); }, wi); },
                                         [&] { net.forward(xi, true); net.backward(wi); }),
              1e-4);
}

TEST(Gradients, TanhMlp) {
    std::mt19937_64 rng(6);
    nn::Mlp net({5, 8, 8, 3}, rng, 0.5);
    Matrix x = random_matrix(5, 6, rng);
    const Matrix w = random_matrix(3, 6, rng);
    EXPECT_LT(oracle::max_gradient_error(net.params(), [&] { return weighted([&] { return net.forward(x); }, w); },
                                         [&] { net.forward(x); net.backward(w); }),
              1e-4);
    EXPECT_LT((net.forward(x) - net.infer(x)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Optim, AdamMinimizesQuadratic) {
    Matrix w = Matrix::Constant(3, 1, 5.0), g = Matrix::Zero(3, 1);
    const Matrix target = (Matrix(3, 1) << 1.0, -2.0, 0.5).finished();
    std::vector<nn::ParamRef> p{{"w", &w, &g}};
    nn::Adam opt(0.05);
    for (int i = 0; i < 2000; ++i) {
        g = 2.0 * (w - target);
        opt.step(p);
    }
    EXPECT_LT((w - target).norm(), 1e-3);
}

TEST(Optim, GradientClipping) {
    Matrix a = Matrix::Zero(2, 1), ga = (Matrix(2, 1) << 3.0, 4.0).finished();
    std::vector<nn::ParamRef> p{{"a", &a, &ga}};
    nn::clip_grad_norm(p, 1.0);
    EXPECT_NEAR(nn::grad_norm(p), 1.0, 1e-12);
    EXPECT_NEAR(ga(0) / ga(1), 0.75, 1e-12);
    nn::clip_grad_norm(p, 10.0);
    EXPECT_NEAR(nn::grad_norm(p), 1.0, 1e-12);
}

TEST(BatchNorm, RecalibratedInferenceMatchesFullBatch) {
    std::mt19937_64 rng(8);
    nn::ResMlp net(5, 12, 3, rng);
    const Matrix x = random_matrix(5, 200, rng);
    for (int i = 0; i < 3; ++i) net.forward(random_matrix(5, 16, rng), true);
    EXPECT_GT((net.infer(x) - net.forward(x, true)).cwiseAbs().maxCoeff(), 1e-3);
    net.recalibrate(x);
    const Matrix inferred = net.infer(x);
    EXPECT_LT((inferred - net.forward(x, true)).cwiseAbs().maxCoeff(), 1e-10);
}
