#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "tcinet/neural.hpp"
#include "tcinet/rng.hpp"

using namespace tcinet;
using neural::Matrix;
using neural::Sequence;

namespace {

Sequence random_sequence(Rng& rng, int steps, int batch, int features) {
    Sequence s(steps);
    for (auto& m : s) {
        m.resize(batch, features);
        for (Eigen::Index r = 0; r < batch; ++r)
            for (Eigen::Index c = 0; c < features; ++c) m(r, c) = rng.normal();
    }
    return s;
}

/// Central finite differences against analytic gradients for every entry of
/// every parameter. `loss` must be a pure function of the current parameter
/// values; `compute_grads` runs one forward+backward pass.
double max_param_grad_error(const std::vector<neural::Parameter*>& params,
                            const std::function<double()>& loss,
                            const std::function<void()>& compute_grads, double h = 1e-5) {
    for (auto* p : params) p->zero_grad();
    compute_grads();
    double worst = 0.0;
    for (auto* p : params) {
        for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                const double saved = p->value(r, c);
                p->value(r, c) = saved + h;
                const double up = loss();
                p->value(r, c) = saved - h;
                const double down = loss();
                p->value(r, c) = saved;
                const double fd = (up - down) / (2.0 * h);
                const double an = p->grad(r, c);
                const double rel = std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an));
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

} // namespace

TEST_CASE("all-zero weights and inputs give zero LSTM output", "[neural]") {
    Rng rng(1);
    neural::LstmLayer lstm(3, 4, true, false, rng);
    lstm.weights().value.setZero();
    lstm.recurrent().value.setZero();
    lstm.bias().value.setZero();
    Sequence input(5, Matrix::Zero(2, 3));
    const auto out = lstm.forward(input);
    REQUIRE(out.size() == 5);
    for (const auto& m : out) REQUIRE(m.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-step recurrence matches hand arithmetic", "[neural]") {
    Rng rng(2);
    neural::LstmLayer lstm(1, 2, false, false, rng);
    lstm.weights().value.setOnes();
    lstm.recurrent().value.setOnes();
    lstm.bias().value.setOnes();
    Sequence input{Matrix::Constant(1, 1, 1.0)};
    const auto out = lstm.forward(input);

    const double z = 1.0 * 1.0 + 1.0; // x*W + b, no recurrent term at t=0
    const double sig = 1.0 / (1.0 + std::exp(-z));
    const double cand = std::tanh(z);
    const double c = sig * cand;
    const double h = sig * std::tanh(c);
    REQUIRE(out.size() == 1);
    for (int u = 0; u < 2; ++u) REQUIRE(out[0](0, u) == Catch::Approx(h).epsilon(1e-12));
}

TEST_CASE("batch rows are independent", "[neural]") {
    Rng rng(3);
    neural::LstmLayer lstm(2, 3, true, true, rng);
    Sequence input = random_sequence(rng, 4, 1, 2);
    Sequence doubled(4);
    for (int t = 0; t < 4; ++t) {
        doubled[t].resize(2, 2);
        doubled[t].row(0) = input[t].row(0);
        doubled[t].row(1) = input[t].row(0);
    }
    const auto out = lstm.forward(doubled);
    for (const auto& m : out) REQUIRE((m.row(0) - m.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("LSTM gradients match finite differences", "[neural]") {
    for (const bool relu : {false, true}) {
        for (const bool seq2seq : {false, true}) {
            Rng rng(relu ? 10 : 20);
            neural::LstmLayer lstm(3, 2, seq2seq, relu, rng);
            const Sequence input = random_sequence(rng, 3, 4, 3);

            // scalar loss: sum of squares of emitted values
            const auto loss = [&] {
                const auto out = lstm.infer(input);
                double s = 0.0;
                for (const auto& m : out) s += m.array().square().sum();
                return s;
            };
            const auto compute = [&] {
                const auto out = lstm.forward(input);
                Sequence upstream(out.size());
                for (std::size_t t = 0; t < out.size(); ++t) upstream[t] = 2.0 * out[t];
                lstm.backward(upstream);
            };
            const double err = max_param_grad_error(lstm.params(), loss, compute);
            INFO("relu=" << relu << " seq2seq=" << seq2seq);
            REQUIRE(err < 1e-4);
        }
    }
}

TEST_CASE("LSTM input gradients match finite differences", "[neural]") {
    Rng rng(30);
    neural::LstmLayer lstm(2, 3, false, true, rng);
    Sequence input = random_sequence(rng, 3, 2, 2);

    const auto loss = [&] {
        const auto out = lstm.infer(input);
        return out[0].array().square().sum();
    };
    const auto out = lstm.forward(input);
    Sequence upstream{2.0 * out[0]};
    const auto dx = lstm.backward(upstream);

    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t t = 0; t < input.size(); ++t) {
        for (Eigen::Index r = 0; r < input[t].rows(); ++r)
            for (Eigen::Index c = 0; c < input[t].cols(); ++c) {
                const double saved = input[t](r, c);
                input[t](r, c) = saved + h;
                const double up = loss();
                input[t](r, c) = saved - h;
                const double down = loss();
                input[t](r, c) = saved;
                const double fd = (up - down) / (2.0 * h);
                const double an = dx[t](r, c);
                worst = std::max(worst, std::abs(fd - an) /
                                            std::max(1e-6, std::abs(fd) + std::abs(an)));
            }
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("dense gradients are exact for a linear map", "[neural]") {
    Rng rng(40);
    neural::DenseLayer dense(3, 2, neural::Activation::linear, rng);
    Matrix x(4, 3), upstream(4, 2);
    for (Eigen::Index r = 0; r < 4; ++r) {
        for (Eigen::Index c = 0; c < 3; ++c) x(r, c) = rng.normal();
        for (Eigen::Index c = 0; c < 2; ++c) upstream(r, c) = rng.normal();
    }
    dense.weights().zero_grad();
    dense.bias().zero_grad();
    dense.forward(x);
    dense.backward(upstream);
    const Matrix expected = upstream.transpose() * x;
    REQUIRE((dense.weights().grad - expected).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((dense.bias().grad - upstream.colwise().sum()).cwiseAbs().maxCoeff() == 0.0);

    // zero upstream -> zero gradients
    dense.weights().zero_grad();
    dense.bias().zero_grad();
    dense.forward(x);
    dense.backward(Matrix::Zero(4, 2));
    REQUIRE(dense.weights().grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dense relu gradients match finite differences", "[neural]") {
    Rng rng(50);
    neural::DenseLayer dense(3, 3, neural::Activation::relu, rng);
    Matrix x(5, 3);
    for (Eigen::Index r = 0; r < 5; ++r)
        for (Eigen::Index c = 0; c < 3; ++c) x(r, c) = rng.normal();

    const auto loss = [&] { return dense.infer(x).array().square().sum(); };
    const auto compute = [&] {
        const auto y = dense.forward(x);
        dense.backward(2.0 * y);
    };
    REQUIRE(max_param_grad_error(dense.params(), loss, compute) < 1e-4);
}

TEST_CASE("dropout is identity when inactive or rate zero", "[neural]") {
    Rng rng(60);
    neural::DropoutLayer d0(0.0);
    neural::DropoutLayer d5(0.5);
    Matrix x(3, 3);
    x.setConstant(2.0);
    REQUIRE((d0.forward(x, true, &rng) - x).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((d5.apply(x, false, nullptr) - x).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE_THROWS_AS(neural::DropoutLayer(1.0), ConfigError);
}

TEST_CASE("dropout keeps about the right fraction, scaled", "[neural]") {
    Rng rng(61);
    neural::DropoutLayer drop(0.5);
    Matrix x = Matrix::Constant(300, 300, 1.0);
    const Matrix y = drop.forward(x, true, &rng);
    int kept = 0;
    for (Eigen::Index r = 0; r < y.rows(); ++r)
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            if (y(r, c) != 0.0) {
                REQUIRE(y(r, c) == Catch::Approx(2.0));
                ++kept;
            }
        }
    const double frac = static_cast<double>(kept) / (300.0 * 300.0);
    REQUIRE(std::abs(frac - 0.5) < 0.02);
}

TEST_CASE("dropout backward uses the forward mask", "[neural]") {
    Rng rng(62);
    neural::DropoutLayer drop(0.4);
    Matrix x = Matrix::Constant(6, 6, 1.0);
    const Matrix y = drop.forward(x, true, &rng);
    const Matrix dx = drop.backward(Matrix::Ones(6, 6));
    REQUIRE((dx - y).cwiseAbs().maxCoeff() == 0.0); // same mask, same scaling
}

TEST_CASE("weighted MSE obeys its closed form", "[neural]") {
    Rng rng(70);
    // unit weights reduce to plain MSE
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_index(32));
        Eigen::VectorXd pred(n), target(n);
        for (int i = 0; i < n; ++i) {
            pred[i] = rng.normal(0.0, 2.0);
            target[i] = rng.normal(0.0, 2.0);
        }
        const auto [loss, grad] =
            neural::weighted_mse(pred, target, Eigen::VectorXd::Ones(n));
        const double plain = (pred - target).squaredNorm() / n;
        REQUIRE(std::abs(loss - plain) < 1e-12);
        (void)grad;
    }

    Eigen::VectorXd p(3), t(3), w(3);
    p << 1.0, 2.0, 3.0;
    t = p;
    w << 1.0, 2.0, 3.0;
    const auto [zero_loss, zero_grad] = neural::weighted_mse(p, t, w);
    REQUIRE(zero_loss == 0.0);
    REQUIRE(zero_grad.cwiseAbs().maxCoeff() == 0.0);

    t << 0.0, 0.0, 0.0;
    const auto [l1, g1] = neural::weighted_mse(p, t, w);
    const auto [l2, g2] = neural::weighted_mse(p, t, (2.0 * w).eval());
    REQUIRE(l2 == 2.0 * l1);
    REQUIRE((g2 - 2.0 * g1).cwiseAbs().maxCoeff() == 0.0);

    REQUIRE_THROWS_AS(neural::weighted_mse(p, t, Eigen::VectorXd::Ones(2)), ShapeError);
}

TEST_CASE("Adam ignores a zero gradient", "[neural]") {
    neural::Parameter p;
    p.name = "w";
    p.value = Matrix::Constant(2, 2, 1.0);
    p.zero_grad();
    neural::Adam adam({&p}, {});
    adam.step();
    REQUIRE((p.value.array() - 1.0).abs().maxCoeff() == 0.0);
}

TEST_CASE("Adam first step moves by about lr in the gradient direction", "[neural]") {
    // bias correction makes m_hat/sqrt(v_hat) = sign(g) on the first step
    neural::Parameter p;
    p.name = "w";
    p.value = Matrix::Constant(2, 2, 1.0);
    p.zero_grad();
    neural::Adam adam({&p}, {});
    p.grad << 0.3, -0.7, 2.0, -0.01;
    const Matrix before = p.value;
    adam.step();
    const Matrix delta = before - p.value;
    for (Eigen::Index r = 0; r < 2; ++r)
        for (Eigen::Index c = 0; c < 2; ++c) {
            const double expected = 0.001 * (p.grad(r, c) > 0 ? 1.0 : -1.0);
            REQUIRE(delta(r, c) == Catch::Approx(expected).epsilon(1e-4));
        }
}

TEST_CASE("Adam descends a quadratic bowl", "[neural]") {
    neural::Parameter p;
    p.name = "w";
    p.value = Matrix::Constant(1, 1, 1.0);
    p.zero_grad();
    neural::Adam adam({&p}, {});
    double prev = p.value(0, 0) * p.value(0, 0);
    for (int i = 0; i < 100; ++i) {
        adam.zero_grad();
        p.grad(0, 0) = 2.0 * p.value(0, 0);
        adam.step();
        const double loss = p.value(0, 0) * p.value(0, 0);
        REQUIRE(loss < prev);
        prev = loss;
    }
}

TEST_CASE("global norm clipping rescales gradients", "[neural]") {
    neural::Parameter a, b;
    a.value = Matrix::Zero(1, 3);
    b.value = Matrix::Zero(1, 4);
    a.zero_grad();
    b.zero_grad();
    a.grad.setConstant(3.0);
    b.grad.setConstant(4.0);
    const double norm = neural::clip_global_norm({&a, &b}, 5.0);
    REQUIRE(norm == Catch::Approx(std::sqrt(9.0 * 3 + 16.0 * 4)));
    double after = a.grad.squaredNorm() + b.grad.squaredNorm();
    REQUIRE(std::sqrt(after) == Catch::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("identical seeds build identical layers", "[neural]") {
    Rng r1(123), r2(123);
    neural::LstmLayer a(3, 5, true, true, r1);
    neural::LstmLayer b(3, 5, true, true, r2);
    REQUIRE((a.weights().value - b.weights().value).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a.recurrent().value - b.recurrent().value).cwiseAbs().maxCoeff() == 0.0);
    // forget-gate bias slice is one
    REQUIRE(a.bias().value.block(0, 5, 1, 5).minCoeff() == 1.0);
    REQUIRE(a.parameter_count() == 4 * 5 * (3 + 5 + 1));
}
