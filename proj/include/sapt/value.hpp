// Dense float64 array with reverse-mode autodiff. The graph is implicit:
// every non-leaf node keeps shared handles to its parents plus a closure that
// routes its gradient to them. backward() topologically sorts from the loss
// and visits each node exactly once.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sapt/errors.hpp"

namespace sapt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, only when requires_grad
    bool requires_grad = false;
    bool backward_done = false;  // set on a loss root once backward() ran
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Shared value-semantics handle over a graph node.
class Value {
  public:
    Value() = default;
    explicit Value(NodePtr n) : n_(std::move(n)) {}

    static Value zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->data.assign(shape_numel(shape), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Value(std::move(n));
    }

    static Value from(std::vector<double> data, Shape shape, bool requires_grad = false) {
        if (data.size() != shape_numel(shape)) {
            throw DimensionError("Value::from: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        auto n = std::make_shared<Node>();
        n->data = std::move(data);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Value(std::move(n));
    }

    static Value scalar(double x, bool requires_grad = false) {
        return from({x}, {}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->data.size(); }
    std::size_t rows() const { return n_->shape.empty() ? 1 : n_->shape[0]; }
    std::size_t cols() const { return n_->shape.size() < 2 ? 1 : n_->shape[1]; }
    bool is_scalar() const { return n_->data.size() == 1 && n_->shape.empty(); }

    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }
    const std::vector<double>& grad() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    double item() const {
        if (n_->data.size() != 1) throw UsageError("Value::item: not a scalar");
        return n_->data[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) {
        n_->requires_grad = v;
        if (!v) n_->grad.clear();
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    Node* node() const { return n_.get(); }
    const NodePtr& ptr() const { return n_; }

  private:
    NodePtr n_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(where) + ": non-finite value produced");
    }
}

// Post-order DFS (iterative; graphs reach tens of thousands of nodes).
inline std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Each requires_grad leaf reachable
// from the loss receives dLoss/dLeaf in its grad buffer (accumulating).
inline void backward(const Value& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward: loss must be a defined scalar");
    }
    Node* root = loss.node();
    if (!root->requires_grad) {
        throw UsageError("backward: loss does not depend on any trainable parameter");
    }
    if (root->backward_done) {
        throw UsageError("backward: already called on this graph; re-record the computation first");
    }
    root->backward_done = true;
    auto order = detail::topo_order(root);
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

// FNV-1a over the raw bytes of a parameter buffer; used by freeze audits.
inline std::uint64_t hash_bytes(const void* p, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t hash_value(const Value& v, std::uint64_t h = 0xcbf29ce484222325ull) {
    return hash_bytes(v.data().data(), v.data().size() * sizeof(double), h);
}

}  // namespace sapt
