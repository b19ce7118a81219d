#include "alm/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "alm/error.hpp"
#include "alm/rng.hpp"

namespace alm {
namespace {

thread_local bool t_grad_enabled = true;

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    check_shape(shape);
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->data.assign(shape_numel(shape), value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::clone() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = node_->requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::detach() const {
    Tensor t = clone();
    t.set_requires_grad(false);
    return t;
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Trace Trace::build(const Tensor& loss) {
    // Iterative post-order DFS; reversing it gives consumers before producers.
    Trace trace;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            trace.order_.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(trace.order_.begin(), trace.order_.end());
    return trace;
}

void backward(const Tensor& loss) { backward(loss, Trace::build(loss)); }

void backward(const Tensor& loss, const Trace& trace) {
    if (loss.numel() != 1) throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    loss.node()->ensure_grad()[0] += 1.0;
    for (detail::Node* node : trace.nodes()) {
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    // Intermediate grads are not retained; leaves keep theirs.
    for (detail::Node* node : trace.nodes()) {
        if (node->backward) node->grad.clear();
    }
}

Tensor rng_normal(const Shape& shape, double mean, double stddev, std::uint64_t seed) {
    if (stddev < 0) throw ConfigError("rng_normal: stddev must be >= 0");
    Tensor t = Tensor::zeros(shape);
    Rng rng(seed);
    for (double& v : t.data()) v = mean + stddev * rng.normal();
    return t;
}

Tensor rng_uniform(const Shape& shape, double low, double high, std::uint64_t seed) {
    if (!(high >= low)) throw ConfigError("rng_uniform: high must be >= low");
    Tensor t = Tensor::zeros(shape);
    Rng rng(seed);
    for (double& v : t.data()) v = low + (high - low) * rng.uniform();
    return t;
}

}  // namespace alm
