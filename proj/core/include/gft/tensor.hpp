#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "gft/errors.hpp"

namespace gft {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Row-major strides.
inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size());
    std::size_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// RAII guard disabling gradient recording (evaluation passes).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// One recorded value in the define-by-run graph. A fresh set of nodes is
// created on every forward pass; parameters are long-lived leaf nodes.
template <typename Real>
struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // allocated lazily, accumulated with +=
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // adds this node's grad into the parents'

    Node() = default;
    Node(Shape s, std::vector<Real> v) : shape(std::move(s)), value(std::move(v)) {}

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
};

template <typename Real>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<Real>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape s) {
        auto n = std::make_shared<Node<Real>>(std::move(s), std::vector<Real>());
        n->value.assign(numel(n->shape), Real(0));
        return Tensor(std::move(n));
    }

    static Tensor full(Shape s, Real v) {
        auto n = std::make_shared<Node<Real>>(std::move(s), std::vector<Real>());
        n->value.assign(numel(n->shape), v);
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape s, std::vector<Real> data) {
        if (numel(s) != data.size())
            throw DimensionError("tensor data size " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(s));
        return Tensor(std::make_shared<Node<Real>>(std::move(s), std::move(data)));
    }

    static Tensor scalar(Real v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    Real* data() { return node_->value.data(); }
    const Real* data() const { return node_->value.data(); }
    std::vector<Real>& values() { return node_->value; }
    const std::vector<Real>& values() const { return node_->value; }

    Real item() const {
        if (size() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::vector<Real>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<Real>& grad() const {
        const_cast<Node<Real>*>(node_.get())->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        node_->grad.assign(node_->value.size(), Real(0));
    }

    std::shared_ptr<Node<Real>> node() const { return node_; }

private:
    std::shared_ptr<Node<Real>> node_;
};

// Topologically ordered view of the graph below a root: every node's parents
// appear before the node itself, and each node appears exactly once.
template <typename Real>
class Tape {
public:
    static Tape build(const Tensor<Real>& root) {
        Tape t;
        if (!root.defined()) return t;
        std::unordered_set<const Node<Real>*> visited;
        struct Frame {
            Node<Real>* n;
            std::size_t next;
        };
        std::vector<Frame> stack;
        visited.insert(root.node().get());
        stack.push_back({root.node().get(), 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->parents.size()) {
                Node<Real>* p = f.n->parents[f.next++].get();
                if (visited.insert(p).second) stack.push_back({p, 0});
            } else {
                t.order_.push_back(f.n);
                stack.pop_back();
            }
        }
        return t;
    }

    const std::vector<Node<Real>*>& order() const { return order_; }
    std::size_t size() const { return order_.size(); }

private:
    std::vector<Node<Real>*> order_;
};

// Reverse sweep from a scalar loss; populates .grad on every node that
// requires gradients and is reachable from the loss.
template <typename Real>
inline void backward(const Tensor<Real>& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward requires a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    Tape<Real> tape = Tape<Real>::build(loss);
    loss.node()->ensure_grad();
    loss.node()->grad[0] += Real(1);
    const auto& order = tape.order();
    for (std::size_t i = order.size(); i-- > 0;) {
        Node<Real>* n = order[i];
        if (n->backprop) n->backprop();
    }
}

template <typename Real>
inline bool all_finite(const Tensor<Real>& t) {
    for (Real v : t.values())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace gft
