#include "orchard/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace orchard {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t e : shape) {
        if (e == 0) throw DimensionError("zero extent in shape " + shape_to_string(shape));
        n *= e;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

size_t window_output_extent(size_t in, size_t kernel, size_t stride, size_t padding) {
    size_t padded = in + 2 * padding;
    if (kernel == 0 || stride == 0) {
        throw DimensionError("kernel and stride must be positive");
    }
    if (kernel > padded) {
        throw DimensionError("kernel " + std::to_string(kernel) + " larger than padded input " +
                             std::to_string(padded));
    }
    return (padded - kernel) / stride + 1;
}

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

template <typename ScalarT>
void backward(const Tensor<ScalarT>& loss) {
    using Node = detail::TensorNode<ScalarT>;
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward() requires a scalar loss tensor");
    }
    auto root = loss.node();
    if (!root->requires_grad) {
        throw UsageError("backward() on a tensor that does not require grad");
    }
    if (root->op_name != nullptr && !root->backward_fn) {
        throw UsageError("backward() on an already-consumed graph");
    }

    // Iterative post-order DFS; reverse post-order is a topological order.
    std::vector<std::shared_ptr<Node>> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            auto child = node->parents[next_child++];
            if (child->requires_grad && seen.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += ScalarT{1};
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node& node = **it;
        if (node.backward_fn) node.backward_fn(node);
    }

    // Consume the graph: interior nodes drop their edges and closures so the
    // memory is released and a second traversal is impossible.
    for (auto& node : topo) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->parents.clear();
        }
    }
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

template class Tensor<float>;
template class Tensor<double>;

}  // namespace orchard
