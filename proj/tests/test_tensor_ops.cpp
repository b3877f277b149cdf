#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "orchard/ops.hpp"

using namespace orchard;
using testutil::random_tensor;

namespace {

template <typename S>
ConvParams<S> conv_of(Shape wshape, std::vector<S> w, size_t stride, size_t padding) {
    ConvParams<S> p;
    p.weight = Tensor<S>(std::move(wshape), std::move(w));
    p.stride = stride;
    p.padding = padding;
    return p;
}

}  // namespace

TEST_CASE("conv2d stem shape: 224x224 through 64 7x7/2 kernels gives 112x112") {
    Tensor<float> x(Shape{1, 3, 224, 224}, 0.5f);
    ConvParams<float> p;
    p.weight = Tensor<float>(Shape{64, 3, 7, 7}, 0.01f);
    p.stride = 2;
    p.padding = 3;
    auto y = conv2d(x, p);
    CHECK(y.shape() == Shape{1, 64, 112, 112});
}

TEST_CASE("conv2d 1x1 identity kernel reproduces the input") {
    Rng rng(11);
    auto x = random_tensor(Shape{1, 1, 5, 5}, rng);
    auto p = conv_of<double>(Shape{1, 1, 1, 1}, {1.0}, 1, 0);
    auto y = conv2d(x, p);
    REQUIRE(y.shape() == x.shape());
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d all-ones 3x3 over all-ones 3x3 input sums to 9") {
    Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
    auto p = conv_of<double>(Shape{1, 1, 3, 3}, std::vector<double>(9, 1.0), 1, 0);
    auto y = conv2d(x, p);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d matches the brute-force loop oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 8; ++trial) {
        const size_t stride = 1 + trial % 2;
        auto x = random_tensor(Shape{1, 2, 6, 6}, rng);
        ConvParams<double> p;
        p.weight = random_tensor(Shape{3, 2, 3, 3}, rng);
        p.bias = random_tensor(Shape{3}, rng);
        p.stride = stride;
        p.padding = 1;

        size_t oh = 0, ow = 0;
        std::vector<double> xs(x.values().begin(), x.values().end());
        std::vector<double> ws(p.weight.values().begin(), p.weight.values().end());
        std::vector<double> bs(p.bias.values().begin(), p.bias.values().end());
        auto want = testutil::reference_conv2d(xs, 1, 2, 6, 6, ws, 3, 3, 3, &bs, stride, 1, oh, ow);

        auto y = conv2d(x, p);
        REQUIRE(y.shape() == Shape{1, 3, oh, ow});
        for (size_t i = 0; i < want.size(); ++i) {
            CHECK(y.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv2d rejects channel mismatch with a message naming the axes") {
    Tensor<float> x(Shape{1, 4, 8, 8}, 1.0f);
    ConvParams<float> p;
    p.weight = Tensor<float>(Shape{2, 3, 3, 3}, 0.1f);
    CHECK_THROWS_WITH_AS(conv2d(x, p),
                         doctest::Contains("input channel axis"), DimensionError);
}

TEST_CASE("conv2d flags overflow instead of returning inf") {
    Tensor<float> x(Shape{1, 1, 2, 2}, 3e38f);
    ConvParams<float> p;
    p.weight = Tensor<float>(Shape{1, 1, 2, 2}, 3e38f);
    CHECK_THROWS_AS(conv2d(x, p), NumericError);
}

TEST_CASE("batchnorm2d train mode normalizes each channel to mean 0, var 1") {
    Rng rng(7);
    auto x = random_tensor(Shape{4, 3, 5, 5}, rng, -3.0, 5.0);
    auto bn = BatchNormParams<double>::identity(3);
    auto y = batchnorm2d(x, bn, RunMode::Train);

    const size_t plane = 25, n = 4, c = 3;
    for (size_t ci = 0; ci < c; ++ci) {
        double sum = 0, sq = 0;
        for (size_t bi = 0; bi < n; ++bi) {
            for (size_t i = 0; i < plane; ++i) {
                const double v = y.values()[(bi * c + ci) * plane + i];
                sum += v;
                sq += v * v;
            }
        }
        const double m = static_cast<double>(n * plane);
        CHECK(std::abs(sum / m) < 1e-5);
        CHECK(std::abs(sq / m - 1.0) < 1e-3);  // biased variance, eps-shrunk
    }
}

TEST_CASE("batchnorm2d eval mode with identity statistics is nearly the identity") {
    Rng rng(8);
    auto x = random_tensor(Shape{2, 2, 4, 4}, rng);
    auto bn = BatchNormParams<double>::identity(2);
    bn.epsilon = 1e-12;
    auto y = batchnorm2d(x, bn, RunMode::Eval);
    for (size_t i = 0; i < x.numel(); ++i) {
        CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-9));
    }
}

TEST_CASE("batchnorm2d train mode matches the scalar reference on a fixed 2x2x2x2 input") {
    std::vector<double> xs = {1.0, 2.0, -1.0, 3.0, 0.5, -2.0, 4.0, 1.5,
                              -0.5, 2.5, 1.0, 0.0, 3.0, -1.0, 2.0, 0.5};
    Tensor<double> x(Shape{2, 2, 2, 2}, xs);
    auto bn = BatchNormParams<double>::identity(2);
    bn.gamma = Tensor<double>(Shape{2}, std::vector<double>{1.5, 0.75});
    bn.beta = Tensor<double>(Shape{2}, std::vector<double>{0.25, -0.5});

    auto want = testutil::reference_batchnorm_train(xs, 2, 2, 2, 2, {1.5, 0.75}, {0.25, -0.5},
                                                    bn.epsilon);
    auto y = batchnorm2d(x, bn, RunMode::Train);
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(y.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("batchnorm2d updates running statistics with momentum") {
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{2.0, 2.0, 2.0, 2.0});
    auto bn = BatchNormParams<double>::identity(1);
    bn.momentum = 0.1;
    (void)batchnorm2d(x, bn, RunMode::Train);
    CHECK(bn.running_mean.values()[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
    CHECK(bn.running_var.values()[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 0.0));
}

TEST_CASE("batchnorm2d rejects channel mismatch") {
    Tensor<double> x(Shape{1, 3, 2, 2}, 1.0);
    auto bn = BatchNormParams<double>::identity(2);
    CHECK_THROWS_AS(batchnorm2d(x, bn, RunMode::Train), DimensionError);
}

TEST_CASE("relu clamps negatives and keeps positives") {
    Tensor<double> x(Shape{3}, std::vector<double>{-1.0, 0.0, 2.0});
    auto y = relu(x);
    CHECK(y.values()[0] == 0.0);
    CHECK(y.values()[1] == 0.0);
    CHECK(y.values()[2] == 2.0);

    Rng rng(3);
    auto pos = random_tensor(Shape{2, 5}, rng, 0.1, 2.0);
    auto same = relu(pos);
    for (size_t i = 0; i < pos.numel(); ++i) CHECK(same.values()[i] == pos.values()[i]);
}

TEST_CASE("maxpool2d shape and window maxima") {
    SUBCASE("resnet stem pool: 112 -> 56") {
        Tensor<float> x(Shape{1, 64, 112, 112}, 1.0f);
        auto y = maxpool2d(x, 3, 2, 1);
        CHECK(y.shape() == Shape{1, 64, 56, 56});
    }
    SUBCASE("2x2 window picks the max") {
        Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
        auto y = maxpool2d(x, 2, 2, 0);
        REQUIRE(y.numel() == 1);
        CHECK(y.item() == 4.0);
    }
    SUBCASE("constant input stays constant") {
        Tensor<double> x(Shape{1, 2, 6, 6}, 1.25);
        auto y = maxpool2d(x, 3, 2, 1);
        for (double v : y.values()) CHECK(v == 1.25);
    }
    SUBCASE("kernel larger than padded input is a dimension error") {
        Tensor<double> x(Shape{1, 1, 2, 2}, 0.0);
        CHECK_THROWS_AS(maxpool2d(x, 5, 1, 1), DimensionError);
    }
}

TEST_CASE("global_avg_pool reduces spatial dims to per-channel means") {
    SUBCASE("resnet tail: [1,512,7,7] -> [1,512]") {
        Tensor<float> x(Shape{1, 512, 7, 7}, 2.0f);
        auto y = global_avg_pool(x);
        CHECK(y.shape() == Shape{1, 512});
        for (float v : y.values()) CHECK(v == 2.0f);
    }
    SUBCASE("mean of [[1,2],[3,4]] is 2.5") {
        Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
        auto y = global_avg_pool(x);
        CHECK(y.item() == doctest::Approx(2.5));
    }
}

TEST_CASE("linear matches shapes and the loop oracle") {
    SUBCASE("head shape: [1,512] x [6,512] -> [1,6]") {
        Tensor<float> x(Shape{1, 512}, 0.1f);
        Tensor<float> w(Shape{6, 512}, 0.01f);
        Tensor<float> b(Shape{6}, 0.0f);
        CHECK(linear(x, w, b).shape() == Shape{1, 6});
    }
    SUBCASE("identity weight, zero bias") {
        Rng rng(4);
        auto x = random_tensor(Shape{2, 3}, rng);
        std::vector<double> eye(9, 0.0);
        eye[0] = eye[4] = eye[8] = 1.0;
        Tensor<double> w(Shape{3, 3}, eye);
        Tensor<double> b(Shape{3}, 0.0);
        auto y = linear(x, w, b);
        for (size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
    }
    SUBCASE("random 2x3 against the three-loop matmul") {
        Rng rng(5);
        auto x = random_tensor(Shape{2, 3}, rng);
        auto w = random_tensor(Shape{4, 3}, rng);
        auto b = random_tensor(Shape{4}, rng);
        auto want = testutil::reference_linear(
            std::vector<double>(x.values().begin(), x.values().end()), 2, 3,
            std::vector<double>(w.values().begin(), w.values().end()), 4,
            std::vector<double>(b.values().begin(), b.values().end()));
        auto y = linear(x, w, b);
        for (size_t i = 0; i < want.size(); ++i) {
            CHECK(y.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
    SUBCASE("feature mismatch is a dimension error") {
        Tensor<double> x(Shape{1, 3}, 0.0);
        Tensor<double> w(Shape{2, 4}, 0.0);
        Tensor<double> b(Shape{2}, 0.0);
        CHECK_THROWS_AS(linear(x, w, b), DimensionError);
    }
}

TEST_CASE("add is the elementwise sum with strict shape agreement") {
    Rng rng(6);
    auto x = random_tensor(Shape{2, 3}, rng);
    auto zero = Tensor<double>(Shape{2, 3}, 0.0);
    auto same = add(x, zero);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(same.values()[i] == x.values()[i]);

    Tensor<double> a(Shape{2}, std::vector<double>{1, 2});
    Tensor<double> b(Shape{2}, std::vector<double>{3, 4});
    auto y = add(a, b);
    CHECK(y.values()[0] == 4.0);
    CHECK(y.values()[1] == 6.0);

    Tensor<double> bad(Shape{3}, 0.0);
    CHECK_THROWS_AS(add(a, bad), DimensionError);
}

TEST_CASE("softmax_cross_entropy reference values") {
    SUBCASE("uniform logits over six classes cost ln 6") {
        Tensor<double> logits(Shape{1, 6}, 0.7);
        auto loss = softmax_cross_entropy(logits, {3});
        CHECK(loss.item() == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    }
    SUBCASE("a dominant true logit drives the loss to zero") {
        std::vector<double> v(6, 0.0);
        v[2] = 60.0;
        Tensor<double> logits(Shape{1, 6}, v);
        auto loss = softmax_cross_entropy(logits, {2});
        CHECK(loss.item() < 1e-12);
    }
    SUBCASE("random 2x6 logits match the scalar oracle") {
        Rng rng(9);
        auto logits = random_tensor(Shape{2, 6}, rng, -2.0, 2.0);
        std::vector<int> labels = {4, 1};
        const double want = testutil::reference_softmax_cross_entropy(
            std::vector<double>(logits.values().begin(), logits.values().end()), 2, 6, labels);
        CHECK(softmax_cross_entropy(logits, labels).item() ==
              doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("out-of-range labels are rejected") {
        Tensor<double> logits(Shape{1, 3}, 0.0);
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {3}), ValidationError);
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), ValidationError);
    }
}

TEST_CASE("softmax rows sum to one and cross-entropy is non-negative") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t n = 1 + rng.uniform_index(4);
        const size_t k = 2 + rng.uniform_index(7);
        auto logits = random_tensor(Shape{n, k}, rng, -8.0, 8.0);
        auto p = softmax(logits);
        for (size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (size_t j = 0; j < k; ++j) sum += p.values()[i * k + j];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng.uniform_index(k));
        CHECK(softmax_cross_entropy(logits, labels).item() >= 0.0);
    }
}

TEST_CASE("shape algebra holds for random valid configurations") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t n = 1 + rng.uniform_index(2);
        const size_t c = 1 + rng.uniform_index(3);
        const size_t h = 3 + rng.uniform_index(12);
        const size_t w = 3 + rng.uniform_index(12);
        const size_t k = 1 + rng.uniform_index(3);
        const size_t stride = 1 + rng.uniform_index(2);
        const size_t pad = rng.uniform_index(2);
        if (h + 2 * pad < k || w + 2 * pad < k) continue;

        auto x = random_tensor(Shape{n, c, h, w}, rng);
        const size_t oc = 1 + rng.uniform_index(3);
        ConvParams<double> p;
        p.weight = random_tensor(Shape{oc, c, k, k}, rng);
        p.stride = stride;
        p.padding = pad;
        auto y = conv2d(x, p);
        const size_t eh = (h + 2 * pad - k) / stride + 1;
        const size_t ew = (w + 2 * pad - k) / stride + 1;
        CHECK(y.shape() == Shape{n, oc, eh, ew});

        if (pad < k) {
            auto pooled = maxpool2d(x, k, stride, pad);
            CHECK(pooled.shape() == Shape{n, c, eh, ew});
        }
        CHECK(global_avg_pool(x).shape() == Shape{n, c});
    }
}
