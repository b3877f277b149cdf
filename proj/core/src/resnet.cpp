#include "orchard/resnet.hpp"

#include <cmath>

#include "orchard/rng.hpp"

namespace orchard {

void ResidualBlockSpec::validate() const {
    if (stride != 1 && stride != 2) {
        throw ValidationError("residual block stride must be 1 or 2");
    }
    bool needs_projection = stride != 1 || in_channels != out_channels;
    if (projection != needs_projection) {
        throw ValidationError("residual block projection flag inconsistent with shape change");
    }
}

void ModelSpec::validate() const {
    if (num_classes < 1) throw ValidationError("model spec: num_classes must be >= 1");
    for (size_t b : stage_block_counts) {
        if (b < 1) throw ValidationError("model spec: every stage needs at least one block");
    }
    for (size_t c : stage_channels) {
        if (c < 1) throw ValidationError("model spec: stage channels must be positive");
    }
    // stem /2, max-pool /2, three stride-2 stages /8; the last stage must
    // keep at least one pixel
    if (input_size < 32) {
        throw ValidationError("model spec: input_size must be at least 32, got " +
                              std::to_string(input_size));
    }
}

size_t ModelSpec::weighted_layer_count() const {
    size_t convs = 0;
    for (size_t b : stage_block_counts) convs += 2 * b;
    return 1 + convs + 1;
}

namespace {

template <typename S>
ConvParams<S> make_conv(size_t out_c, size_t in_c, size_t k, size_t stride, size_t padding,
                        Rng* rng) {
    ConvParams<S> conv;
    Shape wshape{out_c, in_c, k, k};
    if (rng) {
        // He scheme: normal with stddev sqrt(2 / fan_in)
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
        std::vector<S> w(shape_numel(wshape));
        for (auto& v : w) v = static_cast<S>(rng->normal(0.0, stddev));
        conv.weight = Tensor<S>(wshape, std::move(w));
    } else {
        conv.weight = Tensor<S>(wshape);
    }
    conv.weight.set_requires_grad(true);
    conv.stride = stride;
    conv.padding = padding;
    return conv;  // residual-net convolutions carry no bias
}

template <typename S>
ConvBnLayer<S> make_conv_bn(size_t out_c, size_t in_c, size_t k, size_t stride, size_t padding,
                            Rng* rng) {
    ConvBnLayer<S> layer;
    layer.conv = make_conv<S>(out_c, in_c, k, stride, padding, rng);
    layer.bn = BatchNormParams<S>::identity(out_c);
    layer.bn.gamma.set_requires_grad(true);
    layer.bn.beta.set_requires_grad(true);
    return layer;
}

template <typename S>
void init_head(Tensor<S>& weight, Tensor<S>& bias, size_t classes, size_t features, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(features));
    std::vector<S> w(classes * features);
    for (auto& v : w) v = static_cast<S>(rng.uniform(-bound, bound));
    std::vector<S> b(classes);
    for (auto& v : b) v = static_cast<S>(rng.uniform(-bound, bound));
    weight = Tensor<S>(Shape{classes, features}, std::move(w));
    bias = Tensor<S>(Shape{classes}, std::move(b));
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

template <typename S>
void collect_conv_bn(std::vector<NamedTensor<S>>& out, const std::string& prefix,
                     ConvBnLayer<S>& layer, const char* conv_name, const char* bn_name) {
    out.push_back({prefix + conv_name + ".weight", layer.conv.weight, true});
    out.push_back({prefix + bn_name + ".gamma", layer.bn.gamma, true});
    out.push_back({prefix + bn_name + ".beta", layer.bn.beta, true});
    out.push_back({prefix + bn_name + ".running_mean", layer.bn.running_mean, false});
    out.push_back({prefix + bn_name + ".running_var", layer.bn.running_var, false});
}

}  // namespace

template <typename S>
Tensor<S> ResidualBlock<S>::forward(const Tensor<S>& x, RunMode mode) {
    auto y = conv2d(x, conv1.conv);
    y = batchnorm2d(y, conv1.bn, mode);
    y = relu(y);
    y = conv2d(y, conv2.conv);
    y = batchnorm2d(y, conv2.bn, mode);
    Tensor<S> bypass = x;
    if (projection) {
        bypass = conv2d(x, projection->conv);
        bypass = batchnorm2d(bypass, projection->bn, mode);
    }
    return relu(add(y, bypass));
}

template <typename S>
ResNet34<S> ResNet34<S>::build_impl(const ModelSpec& spec, uint64_t seed, bool seeded) {
    spec.validate();
    ResNet34<S> model;
    model.spec_ = spec;

    Rng rng(mix_seed(seed, 0x5eed));
    Rng* r = seeded ? &rng : nullptr;

    model.stem_ = make_conv_bn<S>(spec.stage_channels[0], 3, 7, 2, 3, r);

    size_t in_c = spec.stage_channels[0];
    for (size_t s = 0; s < 4; ++s) {
        std::vector<ResidualBlock<S>> stage;
        const size_t out_c = spec.stage_channels[s];
        for (size_t b = 0; b < spec.stage_block_counts[s]; ++b) {
            ResidualBlock<S> block;
            // first block of stages 2-4 downsamples with stride 2
            const size_t stride = (b == 0 && s > 0) ? 2 : 1;
            block.spec = ResidualBlockSpec{in_c, out_c, stride,
                                           stride != 1 || in_c != out_c};
            block.spec.validate();
            block.conv1 = make_conv_bn<S>(out_c, in_c, 3, stride, 1, r);
            block.conv2 = make_conv_bn<S>(out_c, out_c, 3, 1, 1, r);
            if (block.spec.projection) {
                block.projection = make_conv_bn<S>(out_c, in_c, 1, stride, 0, r);
            }
            stage.push_back(std::move(block));
            in_c = out_c;
        }
        model.stages_.push_back(std::move(stage));
    }

    if (seeded) {
        init_head(model.head_weight_, model.head_bias_, spec.num_classes, spec.feature_dim(),
                  rng);
    } else {
        model.head_weight_ = Tensor<S>(Shape{spec.num_classes, spec.feature_dim()});
        model.head_bias_ = Tensor<S>(Shape{spec.num_classes});
        model.head_weight_.set_requires_grad(true);
        model.head_bias_.set_requires_grad(true);
    }
    return model;
}

template <typename S>
ResNet34<S> ResNet34<S>::build(const ModelSpec& spec, uint64_t seed) {
    return build_impl(spec, seed, true);
}

template <typename S>
ResNet34<S> ResNet34<S>::build_zeroed(const ModelSpec& spec) {
    return build_impl(spec, 0, false);
}

template <typename S>
Tensor<S> ResNet34<S>::forward(const Tensor<S>& batch, RunMode mode) {
    return forward_collect(batch, mode, nullptr);
}

template <typename S>
Tensor<S> ResNet34<S>::forward_collect(const Tensor<S>& batch, RunMode mode,
                                       std::vector<Shape>* stage_shapes) {
    if (batch.rank() != 4 || batch.extent(1) != 3 || batch.extent(2) != spec_.input_size ||
        batch.extent(3) != spec_.input_size) {
        throw DimensionError("forward: expected batch [N,3," + std::to_string(spec_.input_size) +
                             "," + std::to_string(spec_.input_size) + "], got " +
                             shape_to_string(batch.shape()));
    }
    auto x = conv2d(batch, stem_.conv);
    x = batchnorm2d(x, stem_.bn, mode);
    x = relu(x);
    x = maxpool2d(x, 3, 2, 1);
    for (auto& stage : stages_) {
        for (auto& block : stage) x = block.forward(x, mode);
        if (stage_shapes) {
            stage_shapes->push_back(Shape{x.extent(1), x.extent(2), x.extent(3)});
        }
    }
    x = global_avg_pool(x);
    return linear(x, head_weight_, head_bias_);
}

template <typename S>
void ResNet34<S>::replace_head(size_t new_classes, uint64_t seed) {
    if (new_classes < 1) throw ValidationError("replace_head: need at least one class");
    Rng rng(mix_seed(seed, 0x4ead));
    init_head(head_weight_, head_bias_, new_classes, spec_.feature_dim(), rng);
    spec_.num_classes = new_classes;
}

template <typename S>
std::vector<NamedTensor<S>> ResNet34<S>::named_tensors() {
    std::vector<NamedTensor<S>> out;
    collect_conv_bn(out, "stem.", stem_, "conv", "bn");
    for (size_t s = 0; s < stages_.size(); ++s) {
        for (size_t b = 0; b < stages_[s].size(); ++b) {
            const std::string prefix =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
            auto& block = stages_[s][b];
            collect_conv_bn(out, prefix, block.conv1, "conv1", "bn1");
            collect_conv_bn(out, prefix, block.conv2, "conv2", "bn2");
            if (block.projection) {
                collect_conv_bn(out, prefix, *block.projection, "proj.conv", "proj.bn");
            }
        }
    }
    out.push_back({"head.weight", head_weight_, true});
    out.push_back({"head.bias", head_bias_, true});
    return out;
}

template <typename S>
std::vector<NamedTensor<S>> ResNet34<S>::trainable_parameters() {
    std::vector<NamedTensor<S>> out;
    for (auto& nt : named_tensors()) {
        if (nt.trainable) out.push_back(nt);
    }
    return out;
}

template <typename S>
size_t ResNet34<S>::parameter_count() {
    size_t n = 0;
    for (auto& nt : named_tensors()) {
        if (nt.trainable) n += nt.tensor.numel();
    }
    return n;
}

template <typename S>
void ResNet34<S>::zero_grads() {
    for (auto& nt : named_tensors()) nt.tensor.clear_grad();
}

template class ResNet34<float>;
template class ResNet34<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;

}  // namespace orchard
