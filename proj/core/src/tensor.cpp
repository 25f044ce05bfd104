#include "resformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace resformer {

namespace {
std::atomic<uint64_t> g_next_id{1};
std::atomic<uint64_t> g_grad_buffers{0};
thread_local bool t_grad_enabled = true;
}  // namespace

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
    if (frozen) {
        throw std::logic_error("gradient buffer requested for a frozen tensor");
    }
    if (!grad) {
        grad.emplace(values.size(), 0.0);
        g_grad_buffers.fetch_add(1, std::memory_order_relaxed);
    }
    return *grad;
}

NodePtr make_node(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

bool grad_enabled() { return t_grad_enabled; }

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
    return Tensor(detail::make_node(std::move(shape), std::move(v)));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
    return Tensor(detail::make_node(std::move(shape), std::move(v)));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
    return Tensor(detail::make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->values.size()); }

int64_t Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    return node_->shape.at(static_cast<size_t>(axis));
}

int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

const std::vector<double>& Tensor::values() const { return node_->values; }

std::vector<double>& Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    }
    return node_->values[0];
}

double Tensor::at(int64_t flat_index) const {
    return node_->values.at(static_cast<size_t>(flat_index));
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::frozen() const { return node_->frozen; }

void Tensor::set_frozen(bool frozen) {
    node_->frozen = frozen;
    node_->needs_grad = node_->requires_grad && !frozen;
    if (frozen) node_->grad.reset();
}

bool Tensor::has_grad() const { return node_->grad.has_value(); }

const std::vector<double>& Tensor::grad() const {
    if (!node_->grad) {
        throw std::logic_error("tensor has no gradient buffer");
    }
    return *node_->grad;
}

void Tensor::zero_grad() { node_->grad.reset(); }

uint64_t Tensor::id() const { return node_->id; }

Tensor make_param(Shape shape, std::vector<double> values, bool frozen) {
    auto node = detail::make_node(std::move(shape), std::move(values));
    node->requires_grad = true;
    node->frozen = frozen;
    node->needs_grad = !frozen;
    return Tensor(std::move(node));
}

Tensor make_param(const Tensor& values, bool frozen) {
    return make_param(values.shape(), values.values(), frozen);
}

namespace {

void run_backward(const detail::NodePtr& root, const std::vector<double>& seed_grad) {
    if (!root->needs_grad) return;  // nothing below accumulates gradients

    // Gather the reachable subgraph; traversal order is irrelevant because we
    // re-sort by creation id.
    std::vector<detail::Node*> nodes;
    std::unordered_set<detail::Node*> visited;
    std::vector<detail::Node*> stack{root.get()};
    visited.insert(root.get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents) {
            if (p->needs_grad && visited.insert(p.get()).second) {
                stack.push_back(p.get());
            }
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

    auto& g = root->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += seed_grad[i];

    for (detail::Node* n : nodes) {
        if (n->grad && n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    run_backward(loss.node(), {1.0});
}

void backward_from(const Tensor& root, const std::vector<double>& seed_grad) {
    if (static_cast<int64_t>(seed_grad.size()) != root.numel()) {
        throw ShapeError("seed gradient size " + std::to_string(seed_grad.size()) +
                         " does not match tensor shape " + shape_str(root.shape()));
    }
    run_backward(root.node(), seed_grad);
}

uint64_t GradStats::buffers_allocated() { return g_grad_buffers.load(std::memory_order_relaxed); }
void GradStats::reset() { g_grad_buffers.store(0, std::memory_order_relaxed); }

}  // namespace resformer
