#pragma once

#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dipformer/errors.hpp"

namespace dip {

using Shape = std::vector<int>;

// All pinned reductions (norm statistics, softmax sums, losses) accumulate in
// double regardless of the working scalar type.
using Acc = double;

inline size_t numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Tape construction happens only while grad mode is on; eval paths wrap
// themselves in NoGrad so forward passes allocate no graph.
inline bool& grad_mode() {
    static thread_local bool on = true;
    return on;
}

struct NoGrad {
    bool prev;
    NoGrad() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGrad() { grad_mode() = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

// One tape entry. `parents` holds only grad-requiring inputs (it drives the
// topological walk); closures capture whatever values they need on their own.
template <typename S>
struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated iff requires_grad
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>*)> backward;
    bool requires_grad = false;
};

template <typename S>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        auto n = std::make_shared<Node<S>>();
        n->shape = shape;
        n->value.assign(numel(shape), S(0));
        if (requires_grad) {
            n->requires_grad = true;
            n->grad.assign(n->value.size(), S(0));
        }
        return Tensor(std::move(n));
    }

    static Tensor from(const Shape& shape, std::vector<S> data,
                       bool requires_grad = false) {
        if (data.size() != numel(shape))
            throw InternalError("tensor data size does not match shape " + shape_str(shape));
        auto t = zeros(shape, requires_grad);
        t.node_->value = std::move(data);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    size_t size() const { return node_->value.size(); }

    std::vector<S>& value() { return node_->value; }
    const std::vector<S>& value() const { return node_->value; }
    std::vector<S>& grad() { return node_->grad; }
    const std::vector<S>& grad() const { return node_->grad; }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    void zero_grad() {
        if (node_ && node_->requires_grad)
            std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    // Fresh leaf holding a copy of the value, cut off from the tape.
    Tensor detach() const { return from(node_->shape, node_->value); }

    S item() const {
        if (size() != 1) throw InternalError("item() on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }

    const std::shared_ptr<Node<S>>& node() const { return node_; }

  private:
    std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<Node<S>> make_out(const Shape& shape) {
    auto n = std::make_shared<Node<S>>();
    n->shape = shape;
    n->value.resize(numel(shape));
    return n;
}

// Wires the output into the tape if grad mode is on and any input needs
// gradients. Closure runs with out->grad fully accumulated.
template <typename S, typename F>
void attach(const std::shared_ptr<Node<S>>& out,
            std::vector<std::shared_ptr<Node<S>>> inputs, F&& fn) {
    if (!grad_mode()) return;
    bool any = false;
    for (const auto& p : inputs)
        if (p && p->requires_grad) any = true;
    if (!any) return;
    out->requires_grad = true;
    out->grad.assign(out->value.size(), S(0));
    for (auto& p : inputs)
        if (p && p->requires_grad) out->parents.push_back(std::move(p));
    out->backward = std::forward<F>(fn);
}

}  // namespace detail

// Reverse accumulation from a scalar loss. Parameter grads add onto whatever
// they already hold; call zero_grad between steps.
template <typename S>
void backward(const Tensor<S>& loss) {
    if (!loss.defined() || !loss.requires_grad())
        throw InternalError("backward: loss is not attached to the tape");
    if (loss.size() != 1)
        throw InternalError("backward: loss must be scalar, got " + shape_str(loss.shape()));

    Node<S>* root = loss.node().get();
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen{root};
    struct Frame {
        Node<S>* n;
        size_t next;
    };
    std::vector<Frame> stack{{root, 0}};
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node<S>* p = f.n->parents[f.next++].get();
            if (seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    // Post-order lists producers before consumers; walk it backwards.
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(*it);
}

}  // namespace dip
