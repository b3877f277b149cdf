#pragma once

#include <string>
#include <vector>

#include "orchard/tensor.hpp"

namespace orchard {

enum class RunMode { Train, Eval };

// Convolution parameters. weight is [out_channels, in_channels, kh, kw];
// bias is [out_channels] or left undefined for bias-free layers.
template <typename ScalarT>
struct ConvParams {
    Tensor<ScalarT> weight;
    Tensor<ScalarT> bias;
    size_t stride = 1;
    size_t padding = 0;

    size_t out_channels() const { return weight.extent(0); }
    size_t in_channels() const { return weight.extent(1); }
    size_t kernel_h() const { return weight.extent(2); }
    size_t kernel_w() const { return weight.extent(3); }

    void validate() const;
};

template <typename ScalarT>
struct BatchNormParams {
    Tensor<ScalarT> gamma;         // [C]
    Tensor<ScalarT> beta;          // [C]
    Tensor<ScalarT> running_mean;  // [C], buffer
    Tensor<ScalarT> running_var;   // [C], buffer, strictly positive
    double epsilon = 1e-5;
    double momentum = 0.1;

    size_t channels() const { return gamma.extent(0); }

    // gamma=1, beta=0, running stats at identity.
    static BatchNormParams identity(size_t channels);

    void validate() const;
};

// Cross-correlation (no kernel flip) with zero padding over [N,C,H,W].
template <typename ScalarT>
Tensor<ScalarT> conv2d(const Tensor<ScalarT>& input, const ConvParams<ScalarT>& params);

// Train mode normalizes with batch statistics (biased variance) and updates
// the running buffers in place; eval mode reads the running buffers.
template <typename ScalarT>
Tensor<ScalarT> batchnorm2d(const Tensor<ScalarT>& input, BatchNormParams<ScalarT>& params,
                            RunMode mode);

template <typename ScalarT>
Tensor<ScalarT> relu(const Tensor<ScalarT>& input);

// Windowed max over [N,C,H,W]; padding cells act as -inf and the gradient
// goes to the first (row-major) maximal cell of each window.
template <typename ScalarT>
Tensor<ScalarT> maxpool2d(const Tensor<ScalarT>& input, size_t kernel, size_t stride,
                          size_t padding);

// [N,C,H,W] -> [N,C], spatial mean per channel.
template <typename ScalarT>
Tensor<ScalarT> global_avg_pool(const Tensor<ScalarT>& input);

// input [N,F] x weight [K,F] + bias [K] -> [N,K].
template <typename ScalarT>
Tensor<ScalarT> linear(const Tensor<ScalarT>& input, const Tensor<ScalarT>& weight,
                       const Tensor<ScalarT>& bias);

template <typename ScalarT>
Tensor<ScalarT> add(const Tensor<ScalarT>& a, const Tensor<ScalarT>& b);

template <typename ScalarT>
Tensor<ScalarT> mul(const Tensor<ScalarT>& a, const Tensor<ScalarT>& b);

template <typename ScalarT>
Tensor<ScalarT> scale(const Tensor<ScalarT>& a, double factor);

template <typename ScalarT>
Tensor<ScalarT> sum_all(const Tensor<ScalarT>& a);

// Row-wise softmax over [N,K], numerically stabilized by max subtraction.
template <typename ScalarT>
Tensor<ScalarT> softmax(const Tensor<ScalarT>& logits);

// Mean over the batch of -log softmax(logits)[label]; labels in [0,K).
template <typename ScalarT>
Tensor<ScalarT> softmax_cross_entropy(const Tensor<ScalarT>& logits,
                                      const std::vector<int>& labels);

template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& t) {
    std::vector<To> data(t.numel());
    auto src = t.values();
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<To>(src[i]);
    return Tensor<To>(t.shape(), std::move(data));
}

}  // namespace orchard
