#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace alm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

// Dense row-major float64 tensor with optional gradient. Copies share the
// same storage (a handle); use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }
    double item() const;
    double at(std::size_t flat) const { return node_->data.at(flat); }
    // Row-major element of a rank-2 tensor.
    double at(std::size_t row, std::size_t col) const { return node_->data.at(row * node_->shape.at(1) + col); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() { return node_->ensure_grad(); }
    void zero_grad();
    void clear_grad() { node_->grad.clear(); }

    // Deep copy with no graph history; keeps requires_grad.
    Tensor clone() const;
    // Shares nothing with the graph: a new leaf holding a copy of the values.
    Tensor detach() const;
    bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }
    const char* op_name() const { return node_->op; }

    // Internal: used by ops and autograd.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Global (per-thread) switch for graph recording; evaluation code disables it.
bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Reverse topological record of the graph reachable from a loss: every node
// appears once, after all nodes that consume it.
class Trace {
public:
    static Trace build(const Tensor& loss);
    std::size_t size() const noexcept { return order_.size(); }
    const std::vector<detail::Node*>& nodes() const noexcept { return order_; }

private:
    std::vector<detail::Node*> order_;
};

// Populates grads of every requires_grad tensor reachable from `loss`
// (accumulating into existing leaf grads). Throws ContractError unless the
// loss is a scalar.
void backward(const Tensor& loss);
void backward(const Tensor& loss, const Trace& trace);

Tensor rng_normal(const Shape& shape, double mean, double stddev, std::uint64_t seed);
Tensor rng_uniform(const Shape& shape, double low, double high, std::uint64_t seed);

}  // namespace alm
