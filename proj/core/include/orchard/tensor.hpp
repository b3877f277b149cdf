#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "orchard/errors.hpp"

namespace orchard {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Output extent of a strided window op along one spatial axis:
// floor((in + 2*padding - kernel) / stride) + 1.
size_t window_output_extent(size_t in, size_t kernel, size_t stride, size_t padding);

namespace detail {

// Shared storage plus the reverse-mode graph linkage. Ops produce a fresh
// node whose backward_fn reads this node's accumulated grad and adds the
// contribution of each input into the parents' grad buffers.
template <typename ScalarT>
struct TensorNode {
    Shape shape;
    std::vector<ScalarT> data;
    bool requires_grad = false;
    std::vector<ScalarT> grad;  // empty until first accumulation

    // graph edges; empty for leaves
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    const char* op_name = nullptr;

    size_t numel() const { return data.size(); }

    std::vector<ScalarT>& grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), ScalarT{0});
        return grad;
    }
};

}  // namespace detail

// Whether ops record the backward graph on this thread. Evaluation wraps
// forward passes in a NoGradGuard so inference never allocates graph nodes.
bool grad_mode_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// N-dimensional row-major tensor, layout [batch, channel, height, width] for
// image data. Handle with shared ownership: copies alias the same storage.
template <typename ScalarT>
class Tensor {
public:
    using Scalar = ScalarT;
    using Node = detail::TensorNode<ScalarT>;

    Tensor() = default;

    explicit Tensor(Shape shape, ScalarT fill = ScalarT{0}) {
        node_ = std::make_shared<Node>();
        node_->shape = std::move(shape);
        node_->data.assign(shape_numel(node_->shape), fill);
    }

    Tensor(Shape shape, std::vector<ScalarT> values) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor data size " + std::to_string(values.size()) +
                                 " does not match shape " + shape_to_string(shape));
        }
        node_ = std::make_shared<Node>();
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, ScalarT v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(ScalarT v) { return Tensor(Shape{1}, std::vector<ScalarT>{v}); }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t extent(size_t axis) const { return node_->shape.at(axis); }
    size_t numel() const { return node_ ? node_->data.size() : 0; }

    std::span<const ScalarT> values() const { return node_->data; }
    std::span<ScalarT> mutable_values() { return node_->data; }

    ScalarT item() const {
        if (numel() != 1) {
            throw UsageError("item() called on tensor of " + std::to_string(numel()) +
                             " elements");
        }
        return node_->data[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
    std::span<const ScalarT> grad() const {
        if (!has_grad()) throw UsageError("grad read before backward populated it");
        return node_->grad;
    }
    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), ScalarT{0});
    }
    void clear_grad() {
        if (node_) node_->grad.clear();
    }

    // Detached deep copy: same values, no graph, no grad.
    Tensor clone_detached() const {
        Tensor out(node_->shape);
        out.node_->data = node_->data;
        return out;
    }

    std::shared_ptr<Node> node() const { return node_; }

    static Tensor from_node(std::shared_ptr<Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

// Populates .grad on every requires_grad tensor reachable from `loss`.
// `loss` must be a scalar produced by graph-tracked ops. The traversal
// visits each node exactly once in reverse topological order; interior
// edges are released afterwards so a graph cannot be walked twice.
template <typename ScalarT>
void backward(const Tensor<ScalarT>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace orchard
