#include "orchard/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "orchard/parallel.hpp"

namespace orchard {

namespace {

template <typename S>
using NodePtr = std::shared_ptr<detail::TensorNode<S>>;

// Allocates the output and wires it into the graph when grad mode is on and
// any input requires grad. The caller fills data and installs backward_fn.
template <typename S>
Tensor<S> graph_output(Shape shape, const char* op, std::vector<NodePtr<S>> inputs) {
    Tensor<S> out(std::move(shape));
    bool track = false;
    if (grad_mode_enabled()) {
        for (const auto& in : inputs) {
            if (in && in->requires_grad) track = true;
        }
    }
    if (track) {
        auto node = out.node();
        node->requires_grad = true;
        node->op_name = op;
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) {
            if (in) node->parents.push_back(std::move(in));
        }
    }
    return out;
}

template <typename S>
void ensure_finite(const Tensor<S>& t, const char* op) {
    for (S v : t.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
}

template <typename S>
bool tracked(const Tensor<S>& out) {
    return out.node()->requires_grad;
}

template <typename S>
void accumulate(const NodePtr<S>& node, size_t index, S value) {
    node->grad_buffer()[index] += value;
}

void require_rank4(const Shape& s, const char* op) {
    if (s.size() != 4) {
        throw DimensionError(std::string(op) + ": expected rank-4 input [N,C,H,W], got " +
                             shape_to_string(s));
    }
}

}  // namespace

template <typename S>
void ConvParams<S>::validate() const {
    if (!weight.defined() || weight.rank() != 4) {
        throw DimensionError("conv2d: weight must be rank-4 [out,in,kh,kw]");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != out_channels())) {
        throw DimensionError("conv2d: bias must be [out_channels=" +
                             std::to_string(out_channels()) + "], got " +
                             shape_to_string(bias.shape()));
    }
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
}

template <typename S>
BatchNormParams<S> BatchNormParams<S>::identity(size_t channels) {
    BatchNormParams<S> p;
    p.gamma = Tensor<S>(Shape{channels}, S{1});
    p.beta = Tensor<S>(Shape{channels}, S{0});
    p.running_mean = Tensor<S>(Shape{channels}, S{0});
    p.running_var = Tensor<S>(Shape{channels}, S{1});
    return p;
}

template <typename S>
void BatchNormParams<S>::validate() const {
    size_t c = channels();
    if (beta.extent(0) != c || running_mean.extent(0) != c || running_var.extent(0) != c) {
        throw DimensionError("batchnorm2d: parameter vectors disagree on channel count");
    }
    if (epsilon <= 0.0) throw ValidationError("batchnorm2d: epsilon must be positive");
    if (momentum <= 0.0 || momentum >= 1.0) {
        throw ValidationError("batchnorm2d: momentum must lie in (0,1)");
    }
    for (S v : running_var.values()) {
        if (!(v > S{0})) throw ValidationError("batchnorm2d: running_var must stay positive");
    }
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const ConvParams<S>& params) {
    params.validate();
    require_rank4(input.shape(), "conv2d");
    const size_t n = input.extent(0), in_c = input.extent(1);
    const size_t in_h = input.extent(2), in_w = input.extent(3);
    if (in_c != params.in_channels()) {
        throw DimensionError("conv2d: input channel axis (" + std::to_string(in_c) +
                             ") does not match weight in-channel axis (" +
                             std::to_string(params.in_channels()) + ")");
    }
    const size_t out_c = params.out_channels();
    const size_t kh = params.kernel_h(), kw = params.kernel_w();
    const size_t stride = params.stride, pad = params.padding;
    const size_t out_h = window_output_extent(in_h, kh, stride, pad);
    const size_t out_w = window_output_extent(in_w, kw, stride, pad);

    const bool has_bias = params.bias.defined();
    auto out = graph_output<S>(Shape{n, out_c, out_h, out_w}, "conv2d",
                               {input.node(), params.weight.node(),
                                has_bias ? params.bias.node() : nullptr});

    const S* x = input.values().data();
    const S* w = params.weight.values().data();
    const S* b = has_bias ? params.bias.values().data() : nullptr;
    S* y = out.mutable_values().data();

    const size_t in_plane = in_h * in_w;
    const size_t out_plane = out_h * out_w;

    parallel_for(n * out_c, [&](size_t job) {
        const size_t bi = job / out_c;
        const size_t oc = job % out_c;
        const S* xb = x + bi * in_c * in_plane;
        const S* wf = w + oc * in_c * kh * kw;
        S* yp = y + (bi * out_c + oc) * out_plane;
        for (size_t oy = 0; oy < out_h; ++oy) {
            for (size_t ox = 0; ox < out_w; ++ox) {
                S acc = has_bias ? b[oc] : S{0};
                for (size_t ic = 0; ic < in_c; ++ic) {
                    const S* xc = xb + ic * in_plane;
                    const S* wc = wf + ic * kh * kw;
                    for (size_t ky = 0; ky < kh; ++ky) {
                        const ptrdiff_t iy =
                            static_cast<ptrdiff_t>(oy * stride + ky) - static_cast<ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<ptrdiff_t>(in_h)) continue;
                        const S* xrow = xc + static_cast<size_t>(iy) * in_w;
                        const S* wrow = wc + ky * kw;
                        for (size_t kx = 0; kx < kw; ++kx) {
                            const ptrdiff_t ix = static_cast<ptrdiff_t>(ox * stride + kx) -
                                                 static_cast<ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<ptrdiff_t>(in_w)) continue;
                            acc += xrow[ix] * wrow[kx];
                        }
                    }
                }
                yp[oy * out_w + ox] = acc;
            }
        }
    });
    ensure_finite(out, "conv2d");

    if (tracked(out)) {
        auto xn = input.node();
        auto wn = params.weight.node();
        auto bn = has_bias ? params.bias.node() : nullptr;
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            const S* g = node.grad.data();
            const S* xd = xn->data.data();
            const S* wd = wn->data.data();
            if (xn->requires_grad) {
                S* gx = xn->grad_buffer().data();
                parallel_for(n, [&](size_t bi) {
                    for (size_t oc = 0; oc < out_c; ++oc) {
                        const S* wf = wd + oc * in_c * kh * kw;
                        const S* gp = g + (bi * out_c + oc) * out_plane;
                        for (size_t oy = 0; oy < out_h; ++oy) {
                            for (size_t ox = 0; ox < out_w; ++ox) {
                                const S gv = gp[oy * out_w + ox];
                                if (gv == S{0}) continue;
                                for (size_t ic = 0; ic < in_c; ++ic) {
                                    S* gxc = gx + (bi * in_c + ic) * in_plane;
                                    const S* wc = wf + ic * kh * kw;
                                    for (size_t ky = 0; ky < kh; ++ky) {
                                        const ptrdiff_t iy = static_cast<ptrdiff_t>(oy * stride + ky) -
                                                             static_cast<ptrdiff_t>(pad);
                                        if (iy < 0 || iy >= static_cast<ptrdiff_t>(in_h)) continue;
                                        for (size_t kx = 0; kx < kw; ++kx) {
                                            const ptrdiff_t ix = static_cast<ptrdiff_t>(ox * stride + kx) -
                                                                 static_cast<ptrdiff_t>(pad);
                                            if (ix < 0 || ix >= static_cast<ptrdiff_t>(in_w)) continue;
                                            gxc[static_cast<size_t>(iy) * in_w + static_cast<size_t>(ix)] +=
                                                gv * wc[ky * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (wn->requires_grad) {
                S* gw = wn->grad_buffer().data();
                parallel_for(out_c, [&](size_t oc) {
                    for (size_t bi = 0; bi < n; ++bi) {
                        const S* gp = g + (bi * out_c + oc) * out_plane;
                        const S* xb = xd + bi * in_c * in_plane;
                        for (size_t oy = 0; oy < out_h; ++oy) {
                            for (size_t ox = 0; ox < out_w; ++ox) {
                                const S gv = gp[oy * out_w + ox];
                                if (gv == S{0}) continue;
                                for (size_t ic = 0; ic < in_c; ++ic) {
                                    const S* xc = xb + ic * in_plane;
                                    S* gwc = gw + (oc * in_c + ic) * kh * kw;
                                    for (size_t ky = 0; ky < kh; ++ky) {
                                        const ptrdiff_t iy = static_cast<ptrdiff_t>(oy * stride + ky) -
                                                             static_cast<ptrdiff_t>(pad);
                                        if (iy < 0 || iy >= static_cast<ptrdiff_t>(in_h)) continue;
                                        const S* xrow = xc + static_cast<size_t>(iy) * in_w;
                                        for (size_t kx = 0; kx < kw; ++kx) {
                                            const ptrdiff_t ix = static_cast<ptrdiff_t>(ox * stride + kx) -
                                                                 static_cast<ptrdiff_t>(pad);
                                            if (ix < 0 || ix >= static_cast<ptrdiff_t>(in_w)) continue;
                                            gwc[ky * kw + kx] += gv * xrow[ix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (bn && bn->requires_grad) {
                S* gb = bn->grad_buffer().data();
                for (size_t bi = 0; bi < n; ++bi) {
                    for (size_t oc = 0; oc < out_c; ++oc) {
                        const S* gp = g + (bi * out_c + oc) * out_plane;
                        S acc{0};
                        for (size_t i = 0; i < out_plane; ++i) acc += gp[i];
                        gb[oc] += acc;
                    }
                }
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& input, BatchNormParams<S>& params, RunMode mode) {
    params.validate();
    require_rank4(input.shape(), "batchnorm2d");
    const size_t n = input.extent(0), c = input.extent(1);
    const size_t h = input.extent(2), w = input.extent(3);
    if (c != params.channels()) {
        throw DimensionError("batchnorm2d: input channel axis (" + std::to_string(c) +
                             ") does not match parameter length (" +
                             std::to_string(params.channels()) + ")");
    }
    const size_t plane = h * w;
    const size_t m = n * plane;  // reduction size per channel
    const S eps = static_cast<S>(params.epsilon);

    auto out = graph_output<S>(input.shape(), "batchnorm2d",
                               {input.node(), params.gamma.node(), params.beta.node()});

    const S* x = input.values().data();
    const S* gamma = params.gamma.values().data();
    const S* beta = params.beta.values().data();
    S* y = out.mutable_values().data();

    std::vector<S> mean(c), invstd(c);
    if (mode == RunMode::Train) {
        S* rm = params.running_mean.mutable_values().data();
        S* rv = params.running_var.mutable_values().data();
        const S mom = static_cast<S>(params.momentum);
        for (size_t ci = 0; ci < c; ++ci) {
            S sum{0};
            for (size_t bi = 0; bi < n; ++bi) {
                const S* p = x + (bi * c + ci) * plane;
                for (size_t i = 0; i < plane; ++i) sum += p[i];
            }
            const S mu = sum / static_cast<S>(m);
            S sq{0};
            for (size_t bi = 0; bi < n; ++bi) {
                const S* p = x + (bi * c + ci) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const S d = p[i] - mu;
                    sq += d * d;
                }
            }
            const S var = sq / static_cast<S>(m);  // biased
            mean[ci] = mu;
            invstd[ci] = S{1} / std::sqrt(var + eps);
            rm[ci] = (S{1} - mom) * rm[ci] + mom * mu;
            rv[ci] = (S{1} - mom) * rv[ci] + mom * var;
        }
    } else {
        const S* rm = params.running_mean.values().data();
        const S* rv = params.running_var.values().data();
        for (size_t ci = 0; ci < c; ++ci) {
            mean[ci] = rm[ci];
            invstd[ci] = S{1} / std::sqrt(rv[ci] + eps);
        }
    }

    for (size_t bi = 0; bi < n; ++bi) {
        for (size_t ci = 0; ci < c; ++ci) {
            const S* p = x + (bi * c + ci) * plane;
            S* q = y + (bi * c + ci) * plane;
            const S mu = mean[ci], is = invstd[ci], ga = gamma[ci], be = beta[ci];
            for (size_t i = 0; i < plane; ++i) q[i] = ga * (p[i] - mu) * is + be;
        }
    }
    ensure_finite(out, "batchnorm2d");

    if (tracked(out)) {
        auto xn = input.node();
        auto gn = params.gamma.node();
        auto bn = params.beta.node();
        const bool train = mode == RunMode::Train;
        out.node()->backward_fn = [=, mean = std::move(mean),
                                   invstd = std::move(invstd)](detail::TensorNode<S>& node) {
            const S* g = node.grad.data();
            const S* xd = xn->data.data();
            const S* ga = gn->data.data();
            std::vector<S> sum_g(c, S{0}), sum_gx(c, S{0});
            for (size_t bi = 0; bi < n; ++bi) {
                for (size_t ci = 0; ci < c; ++ci) {
                    const S* gp = g + (bi * c + ci) * plane;
                    const S* xp = xd + (bi * c + ci) * plane;
                    const S mu = mean[ci], is = invstd[ci];
                    S s1{0}, s2{0};
                    for (size_t i = 0; i < plane; ++i) {
                        s1 += gp[i];
                        s2 += gp[i] * (xp[i] - mu) * is;
                    }
                    sum_g[ci] += s1;
                    sum_gx[ci] += s2;
                }
            }
            if (gn->requires_grad) {
                S* gg = gn->grad_buffer().data();
                for (size_t ci = 0; ci < c; ++ci) gg[ci] += sum_gx[ci];
            }
            if (bn->requires_grad) {
                S* gb = bn->grad_buffer().data();
                for (size_t ci = 0; ci < c; ++ci) gb[ci] += sum_g[ci];
            }
            if (xn->requires_grad) {
                S* gx = xn->grad_buffer().data();
                const S inv_m = S{1} / static_cast<S>(m);
                for (size_t bi = 0; bi < n; ++bi) {
                    for (size_t ci = 0; ci < c; ++ci) {
                        const S* gp = g + (bi * c + ci) * plane;
                        const S* xp = xd + (bi * c + ci) * plane;
                        S* gq = gx + (bi * c + ci) * plane;
                        const S mu = mean[ci], is = invstd[ci];
                        const S k = ga[ci] * is;
                        if (train) {
                            const S mg = sum_g[ci] * inv_m;
                            const S mgx = sum_gx[ci] * inv_m;
                            for (size_t i = 0; i < plane; ++i) {
                                const S xhat = (xp[i] - mu) * is;
                                gq[i] += k * (gp[i] - mg - xhat * mgx);
                            }
                        } else {
                            for (size_t i = 0; i < plane; ++i) gq[i] += k * gp[i];
                        }
                    }
                }
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& input) {
    auto out = graph_output<S>(input.shape(), "relu", {input.node()});
    const S* x = input.values().data();
    S* y = out.mutable_values().data();
    const size_t n = input.numel();
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > S{0} ? x[i] : S{0};

    if (tracked(out)) {
        auto xn = input.node();
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            if (!xn->requires_grad) return;
            S* gx = xn->grad_buffer().data();
            const S* g = node.grad.data();
            const S* xd = xn->data.data();
            for (size_t i = 0; i < n; ++i) {
                if (xd[i] > S{0}) gx[i] += g[i];  // subgradient at 0 is 0
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& input, size_t kernel, size_t stride, size_t padding) {
    require_rank4(input.shape(), "maxpool2d");
    if (padding >= kernel) {
        throw DimensionError("maxpool2d: padding must be smaller than the kernel");
    }
    const size_t n = input.extent(0), c = input.extent(1);
    const size_t in_h = input.extent(2), in_w = input.extent(3);
    const size_t out_h = window_output_extent(in_h, kernel, stride, padding);
    const size_t out_w = window_output_extent(in_w, kernel, stride, padding);

    auto out = graph_output<S>(Shape{n, c, out_h, out_w}, "maxpool2d", {input.node()});
    const S* x = input.values().data();
    S* y = out.mutable_values().data();
    const size_t in_plane = in_h * in_w;
    const size_t out_plane = out_h * out_w;
    std::vector<size_t> argmax(tracked(out) ? n * c * out_plane : 0);

    for (size_t bc = 0; bc < n * c; ++bc) {
        const S* xp = x + bc * in_plane;
        S* yp = y + bc * out_plane;
        for (size_t oy = 0; oy < out_h; ++oy) {
            for (size_t ox = 0; ox < out_w; ++ox) {
                S best = -std::numeric_limits<S>::infinity();
                size_t best_idx = 0;
                for (size_t ky = 0; ky < kernel; ++ky) {
                    const ptrdiff_t iy =
                        static_cast<ptrdiff_t>(oy * stride + ky) - static_cast<ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<ptrdiff_t>(in_h)) continue;
                    for (size_t kx = 0; kx < kernel; ++kx) {
                        const ptrdiff_t ix = static_cast<ptrdiff_t>(ox * stride + kx) -
                                             static_cast<ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<ptrdiff_t>(in_w)) continue;
                        const size_t idx = static_cast<size_t>(iy) * in_w + static_cast<size_t>(ix);
                        if (xp[idx] > best) {  // strict: first row-major max wins
                            best = xp[idx];
                            best_idx = idx;
                        }
                    }
                }
                yp[oy * out_w + ox] = best;
                if (!argmax.empty()) argmax[bc * out_plane + oy * out_w + ox] = best_idx;
            }
        }
    }
    ensure_finite(out, "maxpool2d");

    if (tracked(out)) {
        auto xn = input.node();
        out.node()->backward_fn = [=, argmax = std::move(argmax)](detail::TensorNode<S>& node) {
            if (!xn->requires_grad) return;
            S* gx = xn->grad_buffer().data();
            const S* g = node.grad.data();
            for (size_t bc = 0; bc < n * c; ++bc) {
                const S* gp = g + bc * out_plane;
                S* gq = gx + bc * in_plane;
                for (size_t i = 0; i < out_plane; ++i) gq[argmax[bc * out_plane + i]] += gp[i];
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& input) {
    require_rank4(input.shape(), "global_avg_pool");
    const size_t n = input.extent(0), c = input.extent(1);
    const size_t plane = input.extent(2) * input.extent(3);

    auto out = graph_output<S>(Shape{n, c}, "global_avg_pool", {input.node()});
    const S* x = input.values().data();
    S* y = out.mutable_values().data();
    const S inv = S{1} / static_cast<S>(plane);
    for (size_t bc = 0; bc < n * c; ++bc) {
        const S* p = x + bc * plane;
        S acc{0};
        for (size_t i = 0; i < plane; ++i) acc += p[i];
        y[bc] = acc * inv;
    }
    ensure_finite(out, "global_avg_pool");

    if (tracked(out)) {
        auto xn = input.node();
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            if (!xn->requires_grad) return;
            S* gx = xn->grad_buffer().data();
            const S* g = node.grad.data();
            for (size_t bc = 0; bc < n * c; ++bc) {
                const S gv = g[bc] * inv;
                S* gq = gx + bc * plane;
                for (size_t i = 0; i < plane; ++i) gq[i] += gv;
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
    if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
        throw DimensionError("linear: expected input [N,F], weight [K,F], bias [K]");
    }
    const size_t n = input.extent(0), f = input.extent(1);
    const size_t k = weight.extent(0);
    if (weight.extent(1) != f) {
        throw DimensionError("linear: feature axis mismatch, input F=" + std::to_string(f) +
                             " vs weight F=" + std::to_string(weight.extent(1)));
    }
    if (bias.extent(0) != k) {
        throw DimensionError("linear: bias length " + std::to_string(bias.extent(0)) +
                             " does not match weight rows " + std::to_string(k));
    }

    auto out = graph_output<S>(Shape{n, k}, "linear",
                               {input.node(), weight.node(), bias.node()});
    const S* x = input.values().data();
    const S* w = weight.values().data();
    const S* b = bias.values().data();
    S* y = out.mutable_values().data();
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < k; ++j) {
            S acc = b[j];
            const S* xr = x + i * f;
            const S* wr = w + j * f;
            for (size_t t = 0; t < f; ++t) acc += xr[t] * wr[t];
            y[i * k + j] = acc;
        }
    }
    ensure_finite(out, "linear");

    if (tracked(out)) {
        auto xn = input.node();
        auto wn = weight.node();
        auto bn = bias.node();
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            const S* g = node.grad.data();
            const S* xd = xn->data.data();
            const S* wd = wn->data.data();
            if (xn->requires_grad) {
                S* gx = xn->grad_buffer().data();
                for (size_t i = 0; i < n; ++i) {
                    for (size_t j = 0; j < k; ++j) {
                        const S gv = g[i * k + j];
                        const S* wr = wd + j * f;
                        S* gr = gx + i * f;
                        for (size_t t = 0; t < f; ++t) gr[t] += gv * wr[t];
                    }
                }
            }
            if (wn->requires_grad) {
                S* gw = wn->grad_buffer().data();
                for (size_t i = 0; i < n; ++i) {
                    for (size_t j = 0; j < k; ++j) {
                        const S gv = g[i * k + j];
                        const S* xr = xd + i * f;
                        S* gr = gw + j * f;
                        for (size_t t = 0; t < f; ++t) gr[t] += gv * xr[t];
                    }
                }
            }
            if (bn->requires_grad) {
                S* gb = bn->grad_buffer().data();
                for (size_t i = 0; i < n; ++i) {
                    for (size_t j = 0; j < k; ++j) gb[j] += g[i * k + j];
                }
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    auto out = graph_output<S>(a.shape(), "add", {a.node(), b.node()});
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* y = out.mutable_values().data();
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) y[i] = pa[i] + pb[i];
    ensure_finite(out, "add");

    if (tracked(out)) {
        auto an = a.node();
        auto bn = b.node();
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            const S* g = node.grad.data();
            if (an->requires_grad) {
                S* ga = an->grad_buffer().data();
                for (size_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                S* gb = bn->grad_buffer().data();
                for (size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    auto out = graph_output<S>(a.shape(), "mul", {a.node(), b.node()});
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* y = out.mutable_values().data();
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) y[i] = pa[i] * pb[i];
    ensure_finite(out, "mul");

    if (tracked(out)) {
        auto an = a.node();
        auto bn = b.node();
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            const S* g = node.grad.data();
            if (an->requires_grad) {
                S* ga = an->grad_buffer().data();
                const S* bd = bn->data.data();
                for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bd[i];
            }
            if (bn->requires_grad) {
                S* gb = bn->grad_buffer().data();
                const S* ad = an->data.data();
                for (size_t i = 0; i < n; ++i) gb[i] += g[i] * ad[i];
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double factor) {
    auto out = graph_output<S>(a.shape(), "scale", {a.node()});
    const S f = static_cast<S>(factor);
    const S* pa = a.values().data();
    S* y = out.mutable_values().data();
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) y[i] = pa[i] * f;
    ensure_finite(out, "scale");

    if (tracked(out)) {
        auto an = a.node();
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            if (!an->requires_grad) return;
            S* ga = an->grad_buffer().data();
            const S* g = node.grad.data();
            for (size_t i = 0; i < n; ++i) ga[i] += g[i] * f;
        };
    }
    return out;
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    auto out = graph_output<S>(Shape{1}, "sum", {a.node()});
    const S* pa = a.values().data();
    S acc{0};
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) acc += pa[i];
    out.mutable_values()[0] = acc;
    ensure_finite(out, "sum");

    if (tracked(out)) {
        auto an = a.node();
        out.node()->backward_fn = [=](detail::TensorNode<S>& node) {
            if (!an->requires_grad) return;
            S* ga = an->grad_buffer().data();
            const S g = node.grad[0];
            for (size_t i = 0; i < n; ++i) ga[i] += g;
        };
    }
    return out;
}

namespace {

// Shared stable softmax used by softmax() and the cross-entropy loss.
template <typename S>
std::vector<S> softmax_rows(const S* x, size_t n, size_t k) {
    std::vector<S> p(n * k);
    for (size_t i = 0; i < n; ++i) {
        const S* row = x + i * k;
        S mx = row[0];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        S denom{0};
        for (size_t j = 0; j < k; ++j) {
            const S e = std::exp(row[j] - mx);
            p[i * k + j] = e;
            denom += e;
        }
        const S inv = S{1} / denom;
        for (size_t j = 0; j < k; ++j) p[i * k + j] *= inv;
    }
    return p;
}

}  // namespace

template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
    if (logits.rank() != 2) {
        throw DimensionError("softmax: expected logits [N,K], got " +
                             shape_to_string(logits.shape()));
    }
    const size_t n = logits.extent(0), k = logits.extent(1);
    auto out = graph_output<S>(logits.shape(), "softmax", {logits.node()});
    auto p = softmax_rows(logits.values().data(), n, k);
    std::copy(p.begin(), p.end(), out.mutable_values().begin());
    ensure_finite(out, "softmax");

    if (tracked(out)) {
        auto xn = logits.node();
        out.node()->backward_fn = [=, p = std::move(p)](detail::TensorNode<S>& node) {
            if (!xn->requires_grad) return;
            S* gx = xn->grad_buffer().data();
            const S* g = node.grad.data();
            for (size_t i = 0; i < n; ++i) {
                S dot{0};
                for (size_t j = 0; j < k; ++j) dot += g[i * k + j] * p[i * k + j];
                for (size_t j = 0; j < k; ++j) {
                    gx[i * k + j] += p[i * k + j] * (g[i * k + j] - dot);
                }
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw DimensionError("softmax_cross_entropy: expected logits [N,K], got " +
                             shape_to_string(logits.shape()));
    }
    const size_t n = logits.extent(0), k = logits.extent(1);
    if (labels.size() != n) {
        throw ValidationError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                              " labels for batch of " + std::to_string(n));
    }
    for (int lbl : labels) {
        if (lbl < 0 || static_cast<size_t>(lbl) >= k) {
            throw ValidationError("softmax_cross_entropy: label " + std::to_string(lbl) +
                                  " outside [0," + std::to_string(k) + ")");
        }
    }

    auto out = graph_output<S>(Shape{1}, "softmax_cross_entropy", {logits.node()});
    auto p = softmax_rows(logits.values().data(), n, k);
    S loss{0};
    for (size_t i = 0; i < n; ++i) {
        // -log softmax via the probabilities; p > 0 by construction
        loss -= std::log(p[i * k + static_cast<size_t>(labels[i])]);
    }
    loss /= static_cast<S>(n);
    out.mutable_values()[0] = loss;
    ensure_finite(out, "softmax_cross_entropy");

    if (tracked(out)) {
        auto xn = logits.node();
        out.node()->backward_fn = [=, p = std::move(p),
                                   labels = labels](detail::TensorNode<S>& node) {
            if (!xn->requires_grad) return;
            S* gx = xn->grad_buffer().data();
            const S g = node.grad[0] / static_cast<S>(n);
            for (size_t i = 0; i < n; ++i) {
                for (size_t j = 0; j < k; ++j) {
                    S v = p[i * k + j];
                    if (j == static_cast<size_t>(labels[i])) v -= S{1};
                    gx[i * k + j] += g * v;
                }
            }
        };
    }
    return out;
}

#define ORCHARD_INSTANTIATE_OPS(S)                                                            \
    template struct ConvParams<S>;                                                            \
    template struct BatchNormParams<S>;                                                       \
    template Tensor<S> conv2d<S>(const Tensor<S>&, const ConvParams<S>&);                     \
    template Tensor<S> batchnorm2d<S>(const Tensor<S>&, BatchNormParams<S>&, RunMode);        \
    template Tensor<S> relu<S>(const Tensor<S>&);                                             \
    template Tensor<S> maxpool2d<S>(const Tensor<S>&, size_t, size_t, size_t);                \
    template Tensor<S> global_avg_pool<S>(const Tensor<S>&);                                  \
    template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
    template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> scale<S>(const Tensor<S>&, double);                                    \
    template Tensor<S> sum_all<S>(const Tensor<S>&);                                          \
    template Tensor<S> softmax<S>(const Tensor<S>&);                                          \
    template Tensor<S> softmax_cross_entropy<S>(const Tensor<S>&, const std::vector<int>&);

ORCHARD_INSTANTIATE_OPS(float)
ORCHARD_INSTANTIATE_OPS(double)

#undef ORCHARD_INSTANTIATE_OPS

}  // namespace orchard
