#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fsed/audio.hpp"

namespace fsed::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One vertex of the reverse-mode graph. `backward` reads this node's grad
/// and accumulates into the parents' grads.
struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    Shape shape;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

/// Shared handle to a graph node; copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);
    /// Trainable leaf.
    static Tensor parameter(Shape shape, std::vector<double> values);

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] int dim(std::size_t i) const { return node_->shape.at(i); }
    [[nodiscard]] std::size_t ndim() const { return node_->shape.size(); }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    /// First dimension.
    [[nodiscard]] int rows() const { return node_->shape.front(); }
    /// Product of all dimensions after the first.
    [[nodiscard]] int cols() const { return static_cast<int>(size() / static_cast<std::size_t>(rows())); }

    [[nodiscard]] const double* data() const { return node_->value.data(); }
    [[nodiscard]] double* data() { return node_->value.data(); }
    [[nodiscard]] std::span<const double> values() const { return node_->value; }
    [[nodiscard]] std::vector<double>& mutable_values() { return node_->value; }
    [[nodiscard]] double item() const;
    [[nodiscard]] double at(std::size_t i) const { return node_->value.at(i); }

    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    /// Gradient buffer (allocated on first use).
    std::vector<double>& grad();
    void zero_grad();

    /// Leaf copy of the values; `trainable` makes it collect gradients.
    [[nodiscard]] Tensor detach(bool trainable = false) const;

    /// Back-propagates from a scalar with seed 1.
    void backward();
    /// Back-propagates with an explicit seed gradient of matching size.
    void backward(std::span<const double> seed);

    [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph construction on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Builds an op result; the backward closure is attached only when some input needs it.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

}  // namespace fsed::nn
