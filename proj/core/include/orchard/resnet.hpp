#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "orchard/ops.hpp"
#include "orchard/tensor.hpp"

namespace orchard {

struct ResidualBlockSpec {
    size_t in_channels = 0;
    size_t out_channels = 0;
    size_t stride = 1;  // 1 or 2
    bool projection = false;

    void validate() const;
};

struct ModelSpec {
    std::array<size_t, 4> stage_block_counts{3, 4, 6, 3};
    std::array<size_t, 4> stage_channels{64, 128, 256, 512};
    size_t num_classes = 6;
    size_t input_size = 224;

    void validate() const;

    // Named depth: stem conv + two convs per residual block + final FC.
    // Projection shortcuts are extra bypass paths and are not counted.
    size_t weighted_layer_count() const;

    size_t feature_dim() const { return stage_channels[3]; }
};

// A tensor handle plus its stable name inside the model. Handles share
// storage with the model, so writing through `tensor` edits the model.
template <typename ScalarT>
struct NamedTensor {
    std::string name;
    Tensor<ScalarT> tensor;
    bool trainable = true;
};

template <typename ScalarT>
struct ConvBnLayer {
    ConvParams<ScalarT> conv;
    BatchNormParams<ScalarT> bn;
};

template <typename ScalarT>
struct ResidualBlock {
    ResidualBlockSpec spec;
    ConvBnLayer<ScalarT> conv1;
    ConvBnLayer<ScalarT> conv2;
    std::optional<ConvBnLayer<ScalarT>> projection;

    Tensor<ScalarT> forward(const Tensor<ScalarT>& x, RunMode mode);
};

// The 34-layer residual classifier: 7x7/64 stride-2 stem, 3x3/2 max-pool,
// stages of {3,4,6,3} two-conv blocks over {64,128,256,512} channels with
// stride-2 projection shortcuts entering stages 2-4, global average pool
// and a num_classes-way linear head.
template <typename ScalarT>
class ResNet34 {
public:
    ResNet34() = default;

    // Seeded fresh initialization: He-normal conv weights, identity
    // batchnorm, small-uniform head.
    static ResNet34 build(const ModelSpec& spec, uint64_t seed);

    // All-zero weights; used by the checkpoint loader before overwriting.
    static ResNet34 build_zeroed(const ModelSpec& spec);

    const ModelSpec& spec() const { return spec_; }
    size_t num_classes() const { return spec_.num_classes; }

    Tensor<ScalarT> forward(const Tensor<ScalarT>& batch, RunMode mode);

    // Same pass, also reporting the per-sample output shape [C,H,W] after
    // each stage (test hook for the stage-size contract).
    Tensor<ScalarT> forward_collect(const Tensor<ScalarT>& batch, RunMode mode,
                                    std::vector<Shape>* stage_shapes);

    // Swap in a freshly initialized head; every other tensor is untouched.
    void replace_head(size_t new_classes, uint64_t seed);

    // Construction-ordered name -> tensor view, running stats included.
    std::vector<NamedTensor<ScalarT>> named_tensors();

    std::vector<NamedTensor<ScalarT>> trainable_parameters();

    size_t parameter_count();

    void zero_grads();

    ConvBnLayer<ScalarT>& stem() { return stem_; }
    std::vector<std::vector<ResidualBlock<ScalarT>>>& stages() { return stages_; }
    Tensor<ScalarT>& head_weight() { return head_weight_; }
    Tensor<ScalarT>& head_bias() { return head_bias_; }

private:
    static ResNet34 build_impl(const ModelSpec& spec, uint64_t seed, bool seeded);

    ModelSpec spec_;
    ConvBnLayer<ScalarT> stem_;
    std::vector<std::vector<ResidualBlock<ScalarT>>> stages_;
    Tensor<ScalarT> head_weight_;
    Tensor<ScalarT> head_bias_;
};

extern template class ResNet34<float>;
extern template class ResNet34<double>;
extern template struct ResidualBlock<float>;
extern template struct ResidualBlock<double>;

}  // namespace orchard
