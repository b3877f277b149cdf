#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "orchard/ops.hpp"

using namespace orchard;
using testutil::gradient_check;
using testutil::random_tensor;
using testutil::random_tensor_kink_free;

TEST_CASE("backward of sum(w*x) with x fixed yields grad(w) = x") {
    Tensor<double> w(Shape{3}, std::vector<double>{0.5, -1.0, 2.0});
    Tensor<double> x(Shape{3}, std::vector<double>{3.0, 4.0, -5.0});
    w.set_requires_grad(true);
    auto loss = sum_all(mul(w, x));
    backward(loss);
    REQUIRE(w.has_grad());
    for (size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == x.values()[i]);
}

TEST_CASE("backward of sum(w^2) at [1,-2] yields [2,-4]") {
    Tensor<double> w(Shape{2}, std::vector<double>{1.0, -2.0});
    w.set_requires_grad(true);
    auto loss = sum_all(mul(w, w));
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(-4.0));
}

TEST_CASE("relu routes gradient only through positive inputs") {
    Tensor<double> x(Shape{2}, std::vector<double>{-1.0, 2.0});
    x.set_requires_grad(true);
    auto loss = sum_all(relu(x));
    backward(loss);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("add passes gradients unchanged to both inputs") {
    Rng rng(21);
    auto a = random_tensor(Shape{2, 2}, rng);
    auto b = random_tensor(Shape{2, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto loss = sum_all(add(a, b));
    backward(loss);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(a.grad()[i] == 1.0);
        CHECK(b.grad()[i] == 1.0);
    }
}

TEST_CASE("backward on a non-scalar is a usage error") {
    Tensor<double> x(Shape{2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);
    auto y = relu(x);
    CHECK_THROWS_AS(backward(y), UsageError);
}

TEST_CASE("a consumed graph cannot be walked twice") {
    Tensor<double> x(Shape{2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);
    auto loss = sum_all(x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), UsageError);
}

TEST_CASE("backward is linear: grad(a*l1 + b*l2) = a*grad(l1) + b*grad(l2)") {
    Rng rng(22);
    const double ca = 1.7, cb = -0.6;

    auto make_inputs = [&](uint64_t seed) {
        Rng r(seed);
        auto x = random_tensor(Shape{2, 4}, r);
        x.set_requires_grad(true);
        return x;
    };
    auto loss1 = [](const Tensor<double>& x) { return sum_all(mul(x, x)); };
    auto loss2 = [](const Tensor<double>& x) { return sum_all(relu(x)); };

    auto x1 = make_inputs(5);
    backward(loss1(x1));
    std::vector<double> g1(x1.grad().begin(), x1.grad().end());

    auto x2 = make_inputs(5);
    backward(loss2(x2));
    std::vector<double> g2(x2.grad().begin(), x2.grad().end());

    auto x3 = make_inputs(5);
    backward(add(scale(loss1(x3), ca), scale(loss2(x3), cb)));
    for (size_t i = 0; i < g1.size(); ++i) {
        CHECK(x3.grad()[i] == doctest::Approx(ca * g1[i] + cb * g2[i]).epsilon(1e-12));
    }
}

TEST_CASE("gradient accumulates across two backward passes over fresh graphs") {
    Tensor<double> x(Shape{2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);
    backward(sum_all(x));
    backward(sum_all(x));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 2.0);
}

// Finite differences against every operator (a light pass; the acceptance
// suite runs the full 20-trial sweep).

TEST_CASE("finite differences: conv2d (input, weight, bias)") {
    Rng rng(31);
    auto x = random_tensor(Shape{2, 2, 5, 5}, rng);
    ConvParams<double> p;
    p.weight = random_tensor(Shape{3, 2, 3, 3}, rng);
    p.bias = random_tensor(Shape{3}, rng);
    p.stride = 2;
    p.padding = 1;
    x.set_requires_grad(true);
    p.weight.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    auto proj = random_tensor(Shape{2, 3, 3, 3}, rng);

    auto check = gradient_check({x, p.weight, p.bias},
                                [&] { return sum_all(mul(conv2d(x, p), proj)); });
    CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: batchnorm2d in both modes") {
    Rng rng(32);
    for (RunMode mode : {RunMode::Train, RunMode::Eval}) {
        auto x = random_tensor(Shape{2, 3, 3, 3}, rng);
        auto bn = BatchNormParams<double>::identity(3);
        bn.gamma = random_tensor(Shape{3}, rng, 0.5, 1.5);
        bn.beta = random_tensor(Shape{3}, rng);
        bn.running_var = random_tensor(Shape{3}, rng, 0.5, 2.0);
        bn.running_mean = random_tensor(Shape{3}, rng);
        x.set_requires_grad(true);
        bn.gamma.set_requires_grad(true);
        bn.beta.set_requires_grad(true);
        auto proj = random_tensor(Shape{2, 3, 3, 3}, rng);

        auto check = gradient_check({x, bn.gamma, bn.beta},
                                    [&] { return sum_all(mul(batchnorm2d(x, bn, mode), proj)); });
        CHECK(check.max_rel_err < 1e-4);
    }
}

TEST_CASE("finite differences: relu away from the kink") {
    Rng rng(33);
    auto x = random_tensor_kink_free(Shape{3, 4}, rng);
    x.set_requires_grad(true);
    auto proj = random_tensor(Shape{3, 4}, rng);
    auto check = gradient_check({x}, [&] { return sum_all(mul(relu(x), proj)); });
    CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: maxpool2d with distinct window values") {
    Rng rng(34);
    auto x = random_tensor_kink_free(Shape{1, 2, 6, 6}, rng, false);
    x.set_requires_grad(true);
    auto out_probe = maxpool2d(x, 3, 2, 1);
    auto proj = random_tensor(out_probe.shape(), rng);
    auto check = gradient_check({x}, [&] { return sum_all(mul(maxpool2d(x, 3, 2, 1), proj)); });
    CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: global_avg_pool, linear and residual add") {
    Rng rng(35);
    auto x = random_tensor(Shape{2, 3, 4, 4}, rng);
    x.set_requires_grad(true);
    auto proj = random_tensor(Shape{2, 3}, rng);
    auto check =
        gradient_check({x}, [&] { return sum_all(mul(global_avg_pool(x), proj)); });
    CHECK(check.max_rel_err < 1e-4);

    auto xin = random_tensor(Shape{3, 5}, rng);
    auto w = random_tensor(Shape{4, 5}, rng);
    auto b = random_tensor(Shape{4}, rng);
    xin.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    auto proj2 = random_tensor(Shape{3, 4}, rng);
    check = gradient_check({xin, w, b}, [&] { return sum_all(mul(linear(xin, w, b), proj2)); });
    CHECK(check.max_rel_err < 1e-4);

    auto a1 = random_tensor(Shape{2, 6}, rng);
    auto a2 = random_tensor(Shape{2, 6}, rng);
    a1.set_requires_grad(true);
    a2.set_requires_grad(true);
    auto proj3 = random_tensor(Shape{2, 6}, rng);
    check = gradient_check({a1, a2}, [&] { return sum_all(mul(add(a1, a2), proj3)); });
    CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: softmax_cross_entropy") {
    Rng rng(36);
    auto logits = random_tensor(Shape{4, 6}, rng, -2.0, 2.0);
    logits.set_requires_grad(true);
    std::vector<int> labels = {0, 3, 5, 2};
    auto check = gradient_check({logits}, [&] { return softmax_cross_entropy(logits, labels); });
    CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("cross-entropy backward equals (softmax - onehot)/N") {
    Rng rng(37);
    auto logits = random_tensor(Shape{3, 4}, rng, -1.5, 1.5);
    logits.set_requires_grad(true);
    std::vector<int> labels = {2, 0, 1};

    auto p = softmax(logits);
    backward(softmax_cross_entropy(logits, labels));
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < 4; ++j) {
            double want = p.values()[i * 4 + j];
            if (static_cast<int>(j) == labels[i]) want -= 1.0;
            want /= 3.0;
            CHECK(logits.grad()[i * 4 + j] == doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("no-grad mode skips graph construction entirely") {
    Tensor<double> x(Shape{2}, std::vector<double>{1.0, 2.0});
    x.set_requires_grad(true);
    NoGradGuard guard;
    auto y = sum_all(x);
    CHECK_FALSE(y.requires_grad());
}
