#include <doctest.h>

#include <cmath>
#include <vector>

#include "iod/rng.hpp"
#include "iod/tensor.hpp"

using namespace iod;

namespace {

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Small random net used for backward-vs-finite-difference checks: a conv
// layer, a silu, a matmul against fixed weights and a smooth scalar head.
struct ToyNet {
    Tensor conv_k;   // [2,1,2,2]
    Tensor mix;      // [8,3]
    Eigen::ArrayXd image;

    explicit ToyNet(Rng& rng) {
        Eigen::ArrayXd k(8), m(24);
        for (int i = 0; i < 8; ++i) k[i] = rng.normal() * 0.5;
        for (int i = 0; i < 24; ++i) m[i] = rng.normal() * 0.5;
        conv_k = Tensor::from_array({2, 1, 2, 2}, k);
        mix = Tensor::from_array({8, 3}, m);
        image = Eigen::ArrayXd(9);
        for (int i = 0; i < 9; ++i) image[i] = rng.normal();
    }

    Tensor forward(const Tensor& params) const {
        // params [8]: first 8 conv kernel entries are perturbed by params.
        Tensor k = add(conv_k, reshape(params, {2, 1, 2, 2}));
        Tensor x = Tensor::from_array({1, 3, 3}, image);
        Tensor fm = silu(conv2d(x, k, 1, 0));     // [2,2,2]
        Tensor flat = reshape(fm, {1, 8});
        Tensor mixed = sigmoid(matmul(flat, mix));  // [1,3]
        return sum(mul(mixed, mixed));
    }
};

}  // namespace

TEST_CASE("conv2d hand-computed dot product") {
    Tensor input = Tensor::from_vector({1, 2, 2}, {1, 2, 3, 4});
    Tensor kernel = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor out = conv2d(input, kernel, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1});
    CHECK(out[0] == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("conv2d identity kernel is bit-exact") {
    Rng rng(7);
    Eigen::ArrayXd data(3 * 4 * 5);
    for (int i = 0; i < data.size(); ++i) data[i] = rng.normal();
    Tensor input = Tensor::from_array({3, 4, 5}, data);
    // One 1x1 kernel per channel wired as identity.
    Eigen::ArrayXd k = Eigen::ArrayXd::Zero(9);
    k[0] = 1.0;  // out 0 <- in 0
    k[4] = 1.0;  // out 1 <- in 1
    k[8] = 1.0;  // out 2 <- in 2
    Tensor kernel = Tensor::from_array({3, 3, 1, 1}, k);
    Tensor out = conv2d(input, kernel, 1, 0);
    REQUIRE(out.size() == input.size());
    for (int i = 0; i < input.size(); ++i) CHECK(out[i] == input[i]);
}

TEST_CASE("conv2d zero kernel gives zero output") {
    Tensor input = Tensor::from_vector({1, 2, 2}, {1, 2, 3, 4});
    Tensor kernel = Tensor::zeros({2, 1, 2, 2});
    Tensor out = conv2d(input, kernel, 1, 1);
    for (int i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("conv2d output spatial dims follow the floor formula") {
    Tensor input = Tensor::zeros({1, 32, 32});
    Tensor kernel = Tensor::zeros({4, 1, 3, 3});
    CHECK(conv2d(input, kernel, 2, 1).shape() == Shape{4, 16, 16});
    CHECK(conv2d(input, kernel, 1, 1).shape() == Shape{4, 32, 32});
}

TEST_CASE("conv2d shape mismatch names the axes") {
    Tensor input = Tensor::zeros({2, 4, 4});
    Tensor kernel = Tensor::zeros({1, 3, 2, 2});
    CHECK_THROWS_AS(conv2d(input, kernel, 1, 0), DimensionError);
    CHECK_THROWS_WITH_AS(conv2d(input, kernel, 1, 0),
                         doctest::Contains("axis"), DimensionError);
}

TEST_CASE("l2_normalize basics") {
    Tensor v = Tensor::from_vector({2}, {3, 4});
    Tensor n = l2_normalize(v);
    CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));

    // A unit vector normalizes to itself.
    Tensor u = Tensor::from_vector({2}, {0.6, 0.8});
    Tensor nu = l2_normalize(u);
    CHECK(nu[0] == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(nu[1] == doctest::Approx(0.8).epsilon(1e-14));

    CHECK_THROWS_AS(l2_normalize(Tensor::zeros({3})), DegenerateInputError);
}

TEST_CASE("l2_normalize per-cell over channel axis") {
    // [2,1,2]: two cells, each a 2-vector along axis 0.
    Tensor x = Tensor::from_vector({2, 1, 2}, {3, 6, 4, 8});
    Tensor n = l2_normalize(x);
    CHECK(n[0] == doctest::Approx(0.6));
    CHECK(n[2] == doctest::Approx(0.8));
    CHECK(n[1] == doctest::Approx(0.6));
    CHECK(n[3] == doctest::Approx(0.8));
}

TEST_CASE("sigmoid at zero is one half") {
    Tensor x = Tensor::scalar(0.0);
    CHECK(sigmoid(x).value() == 0.5);
}

TEST_CASE("backward on w*w at w=3 gives 6") {
    Tensor w = Tensor::scalar(3.0, true);
    Tensor loss = mul(w, w);
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward on a*b routes each factor") {
    Tensor a = Tensor::scalar(2.0, true);
    Tensor b = Tensor::scalar(5.0, true);
    backward(mul(a, b));
    CHECK(a.grad()[0] == doctest::Approx(5.0));
    CHECK(b.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    Tensor w = Tensor::from_vector({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(add(w, w)), ContractError);
}

TEST_CASE("gradient accumulation is additive and reset is explicit") {
    Tensor w = Tensor::scalar(3.0, true);
    backward(mul(w, w));
    backward(mul(w, w));
    CHECK(w.grad()[0] == doctest::Approx(12.0));
    w.zero_grad();
    CHECK_FALSE(w.has_grad());
}

TEST_CASE("backward of a sum of sub-losses equals summed backwards") {
    Rng rng(11);
    Eigen::ArrayXd init(4);
    for (int i = 0; i < 4; ++i) init[i] = rng.normal();

    auto loss1 = [](const Tensor& w) { return sum(mul(w, w)); };
    auto loss2 = [](const Tensor& w) { return sum(sigmoid(w)); };

    Tensor w = Tensor::from_array({4}, init, true);
    backward(add(loss1(w), loss2(w)));
    Eigen::ArrayXd combined = w.grad();

    Tensor w2 = Tensor::from_array({4}, init, true);
    backward(loss1(w2));
    backward(loss2(w2));
    for (int i = 0; i < 4; ++i)
        CHECK(combined[i] == doctest::Approx(w2.grad()[i]).epsilon(1e-12));
}

TEST_CASE("finite differences: analytic cases") {
    Tensor x = Tensor::scalar(3.0);
    auto sq = [](const Tensor& t) { return t.data()[0] * t.data()[0]; };
    Tensor g = finite_difference_gradient(sq, x, 1e-5);
    CHECK(std::abs(g[0] - 6.0) < 1e-6);

    auto constant = [](const Tensor&) { return 42.0; };
    Tensor gc = finite_difference_gradient(constant, Tensor::from_vector({3}, {1, 2, 3}), 1e-5);
    for (int i = 0; i < 3; ++i) CHECK(gc[i] == 0.0);
}

TEST_CASE("backward matches finite differences on random toy nets") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(900 + seed);
        ToyNet net(rng);
        Eigen::ArrayXd p0(8);
        for (int i = 0; i < 8; ++i) p0[i] = rng.normal() * 0.3;

        Tensor params = Tensor::from_array({8}, p0, true);
        backward(net.forward(params));

        auto f = [&](const Tensor& t) { return net.forward(t).value(); };
        Tensor fd = finite_difference_gradient(f, params, 1e-5);
        for (int i = 0; i < 8; ++i)
            CHECK(rel_err(params.grad()[i], fd[i]) < 1e-4);
    }
}

TEST_CASE("elementwise op grads check out against finite differences") {
    Rng rng(33);
    Eigen::ArrayXd init(6);
    for (int i = 0; i < 6; ++i) init[i] = 0.4 + rng.uniform();  // keep away from kinks

    auto f = [](const Tensor& w) {
        Tensor a = slice_axis0(reshape(w, {2, 3}), 0);
        Tensor b = slice_axis0(reshape(w, {2, 3}), 1);
        Tensor expr = div(mul(a, b) + 0.7, clamp_min(b, 0.2));
        expr = maximum(expr, mul_const(a, 0.9));
        expr = minimum(expr, add_const(b, 5.0));
        expr = mul(expr, exp(mul_const(a, 0.3)));
        expr = add(expr, log(clamp_min(b, 1e-3)));
        expr = add(expr, pow_const(abs(a), 1.7));
        return mean(expr);
    };

    Tensor w = Tensor::from_array({6}, init, true);
    backward(f(w));
    Tensor fd = finite_difference_gradient([&](const Tensor& t) { return f(t).value(); }, w, 1e-6);
    for (int i = 0; i < 6; ++i) CHECK(rel_err(w.grad()[i], fd[i]) < 1e-4);
}

TEST_CASE("scalar broadcast ops carry gradients to both sides") {
    Tensor x = Tensor::from_vector({3}, {1, 2, 3}, true);
    Tensor s = Tensor::scalar(2.0, true);
    Tensor t = Tensor::scalar(0.5, true);
    backward(sum(add_scalar(mul_scalar(x, s), t)));
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(s.grad()[0] == doctest::Approx(6.0));   // sum of x
    CHECK(t.grad()[0] == doctest::Approx(3.0));   // count
}

TEST_CASE("reduce_max routes gradient to the (first) argmax") {
    Tensor x = Tensor::from_vector({4}, {1, 7, 7, 3}, true);
    backward(reduce_max(x));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("gather scatters gradient with accumulation") {
    Tensor x = Tensor::from_vector({4}, {1, 2, 3, 4}, true);
    backward(sum(gather(x, {1, 1, 3})));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 2.0);
    CHECK(x.grad()[3] == 1.0);
}

TEST_CASE("bce_with_logits matches the naive formula and gradient") {
    Rng rng(5);
    Eigen::ArrayXd z(5), y(5), w(5);
    for (int i = 0; i < 5; ++i) {
        z[i] = rng.normal() * 2.0;
        y[i] = (i % 2 == 0) ? 1.0 : 0.0;
        w[i] = 0.5 + rng.uniform();
    }
    Tensor logits = Tensor::from_array({5}, z, true);
    Tensor loss = bce_with_logits(logits, y, w);

    double expect = 0.0;
    for (int i = 0; i < 5; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z[i]));
        expect += w[i] * -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
    }
    CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-10));

    backward(loss);
    auto f = [&](const Tensor& t) { return bce_with_logits(t, y, w).value(); };
    Tensor fd = finite_difference_gradient(f, logits, 1e-6);
    for (int i = 0; i < 5; ++i) CHECK(rel_err(logits.grad()[i], fd[i]) < 1e-5);
}

TEST_CASE("l2_normalize gradient vs finite differences") {
    Tensor x = Tensor::from_vector({3}, {0.7, -1.2, 2.0}, true);
    auto f = [](const Tensor& t) { return sum(mul(l2_normalize(t), Tensor::from_vector({3}, {1.0, 2.0, -0.5}))); };
    backward(f(x));
    Tensor fd = finite_difference_gradient([&](const Tensor& t) { return f(t).value(); }, x, 1e-6);
    for (int i = 0; i < 3; ++i) CHECK(rel_err(x.grad()[i], fd[i]) < 1e-5);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(17);
    Eigen::ArrayXd a0(6), b0(8);
    for (int i = 0; i < 6; ++i) a0[i] = rng.normal();
    for (int i = 0; i < 8; ++i) b0[i] = rng.normal();
    Tensor a = Tensor::from_array({3, 2}, a0, true);
    Tensor b = Tensor::from_array({2, 4}, b0, true);
    backward(sum(matmul(a, b)));
    Tensor fda = finite_difference_gradient(
        [&](const Tensor& t) { return sum(matmul(t, b)).value(); }, a, 1e-6);
    Tensor fdb = finite_difference_gradient(
        [&](const Tensor& t) { return sum(matmul(a, t)).value(); }, b, 1e-6);
    for (int i = 0; i < 6; ++i) CHECK(rel_err(a.grad()[i], fda[i]) < 1e-5);
    for (int i = 0; i < 8; ++i) CHECK(rel_err(b.grad()[i], fdb[i]) < 1e-5);
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Tensor w = Tensor::scalar(2.0, true);
    Tensor out;
    {
        NoGradGuard guard;
        out = mul(w, w);
    }
    CHECK_FALSE(out.requires_grad());
    backward(sum(mul(w, w)));  // the guard is scoped; grads flow again
    CHECK(w.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("tensor invariants are enforced") {
    CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor().shape(), ContractError);
    CHECK_THROWS_AS(Tensor::from_vector({2}, {1, 2}).value(), ContractError);
}
