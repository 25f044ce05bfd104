#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "resformer/errors.hpp"

namespace resformer {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One record of the define-by-run computation graph. Interior nodes carry a
// backward hook that reads this node's gradient and accumulates into the
// parents; leaves carry none. Creation ids are monotone, so descending-id
// order over the reachable set is a valid reverse topological order.
struct Node {
    Shape shape;
    std::vector<double> values;
    std::optional<std::vector<double>> grad;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;
    bool frozen = false;
    bool needs_grad = false;  // effective flag: this node participates in backprop
    uint64_t id = 0;

    // Allocates the gradient buffer on first use. Frozen tensors must never
    // reach this point; that is the update-only freeze contract.
    std::vector<double>& ensure_grad();
};

NodePtr make_node(Shape shape, std::vector<double> values);
bool grad_enabled();

}  // namespace detail

// Disables graph construction in scope (evaluation / finite-difference probes).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

// Dense row-major tensor handle with reverse-mode autodiff. Copying a Tensor
// copies the handle, not the storage.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_values(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(int axis) const;
    int rank() const;

    const std::vector<double>& values() const;
    std::vector<double>& mutable_values();
    double item() const;  // scalar tensors only
    double at(int64_t flat_index) const;

    bool requires_grad() const;
    bool frozen() const;
    void set_frozen(bool frozen);
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();  // drops the gradient buffer
    uint64_t id() const;

    detail::NodePtr node() const { return node_; }

  private:
    detail::NodePtr node_;
};

// Leaf tensor that accumulates gradients (unless frozen).
Tensor make_param(Shape shape, std::vector<double> values, bool frozen = false);
Tensor make_param(const Tensor& values, bool frozen = false);

// Reverse-mode sweep from a scalar loss. Every non-frozen requires_grad leaf
// reachable from `loss` receives its accumulated gradient; frozen leaves
// receive none but gradients still flow through the ops that consume them.
void backward(const Tensor& loss);

// Seeds `root`'s gradient with `seed_grad` and runs the sweep below it. Used
// where an upstream gradient is approximated instead of computed.
void backward_from(const Tensor& root, const std::vector<double>& seed_grad);

// Global count of gradient-buffer allocations, for memory-accounting checks.
struct GradStats {
    static uint64_t buffers_allocated();
    static void reset();
};

}  // namespace resformer
