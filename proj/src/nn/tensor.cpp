#include "fsed/nn/tensor.hpp"

#include <cstdlib>
#include <new>
#include <unordered_set>

// Eigen's vectorized loops peel a scalar prologue that depends on the buffer
// address modulo the packet size, which changes the rounding of sums. Giving
// every heap block the same 64-byte alignment keeps results bit-identical
// across runs regardless of allocation history.
void* operator new(std::size_t n) {
    void* p = nullptr;
    if (posix_memalign(&p, 64, n == 0 ? 1 : n) != 0) throw std::bad_alloc();
    return p;
}
void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }

namespace fsed::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor Tensor::zeros(Shape shape) {
    auto node = std::make_shared<Node>();
    node->value.assign(numel(shape), 0.0);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size()) {
        throw Error("tensor value count does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(values);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw Error("item() on a tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

std::vector<double>& Tensor::grad() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach(bool trainable) const {
    Tensor t = from(node_->shape, node_->value);
    t.node_->requires_grad = trainable;
    return t;
}

void Tensor::backward() {
    if (size() != 1) throw Error("backward() without a seed needs a scalar");
    const double one = 1.0;
    backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) {
    if (seed.size() != size()) throw Error("backward seed size mismatch");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    node_->ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) node_->grad[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward) continue;
        for (auto& p : n->parents) {
            if (p->requires_grad) p->ensure_grad();
        }
        n->backward(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (numel(node->shape) != node->value.size()) {
        throw Error("op produced values inconsistent with shape " + shape_str(node->shape));
    }
    if (t_grad_enabled) {
        bool needs = false;
        for (const auto& in : inputs) needs = needs || in.requires_grad();
        if (needs) {
            node->requires_grad = true;
            for (auto& in : inputs) node->parents.push_back(in.node());
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

}  // namespace fsed::nn
