#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sva/tensor.hpp"

namespace sva {

#if defined(SVA_DEBUG_CHECKS)
inline constexpr bool kDebugChecks = true;
#else
inline constexpr bool kDebugChecks = false;
#endif

/// Named parameter tensors with gradient accumulators. Owned by the model,
/// shared read-only across tapes; backward sweeps flush into the grads here.
class ParamStore {
public:
    int add(std::string name, Tensor init) {
        const int slot = static_cast<int>(values_.size());
        index_.emplace(name, slot);
        names_.push_back(std::move(name));
        grads_.emplace_back(Tensor::zeros(init.shape()));
        values_.push_back(std::move(init));
        return slot;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    int size() const { return static_cast<int>(values_.size()); }
    const std::string& name(int slot) const { return names_[static_cast<std::size_t>(slot)]; }
    Tensor& value(int slot) { return values_[static_cast<std::size_t>(slot)]; }
    const Tensor& value(int slot) const { return values_[static_cast<std::size_t>(slot)]; }
    Tensor& grad(int slot) { return grads_[static_cast<std::size_t>(slot)]; }
    const Tensor& grad(int slot) const { return grads_[static_cast<std::size_t>(slot)]; }

    void zero_grads() {
        for (auto& g : grads_) g.set_zero();
    }

    void scale_grads(double s) {
        for (auto& g : grads_) g.array() *= s;
    }

    Index total_size() const {
        Index n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::unordered_map<std::string, int> index_;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode differentiation record. Nodes are appended in creation order,
/// which is already a topological order, so one backward sweep walks the node
/// list once in reverse. Single-owner during a forward/backward pass.
class Tape {
public:
    explicit Tape(ParamStore* params = nullptr, bool grad_enabled = true)
        : params_(params), grad_enabled_(grad_enabled) {}

    /// True when parameter leaves are tracked; with gradients disabled the
    /// tape still records values (eval mode) but no backward closures chain
    /// off the parameters.
    bool grad_enabled() const { return grad_enabled_; }

    /// Leaf referencing a parameter slot; repeated requests share one node.
    Var param(int slot) {
        auto it = param_nodes_.find(slot);
        if (it != param_nodes_.end()) return it->second;
        Node n;
        n.needs_grad = grad_enabled_;
        n.param_slot = slot;
        const Var v = push(std::move(n));
        param_nodes_.emplace(slot, v);
        return v;
    }

    /// Tracked leaf owning its value (gradient w.r.t. it is wanted, e.g. the
    /// image input for receptive-field analysis).
    Var input(Tensor value) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = true;
        return push(std::move(n));
    }

    /// Untracked leaf; no gradient flows into it.
    Var constant(Tensor value) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = false;
        return push(std::move(n));
    }

    /// Op node. `back(tape, self)` routes grad(self) to the op's inputs;
    /// ignored when needs_grad is false.
    Var op(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> back) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.backward = needs_grad ? std::move(back) : nullptr;
        return push(std::move(n));
    }

    const Tensor& val(Var v) const {
        const Node& n = nodes_[idx(v)];
        return n.param_slot >= 0 ? params_->value(n.param_slot) : n.value;
    }

    bool needs_grad(Var v) const { return nodes_[idx(v)].needs_grad; }

    /// Gradient of the last backward() root w.r.t. v; empty tensor if nothing
    /// flowed here.
    const Tensor& grad(Var v) const { return nodes_[idx(v)].grad; }

    /// Gradient buffer for accumulation, allocated on first touch.
    Tensor& grad_buf(Var v) {
        Node& n = nodes_[idx(v)];
        if (n.grad.empty()) n.grad = Tensor::zeros(val(v).shape());
        return n.grad;
    }

    bool has_grad(Var v) const { return !nodes_[idx(v)].grad.empty(); }

    /// Backward from a scalar root with seed 1.
    void backward(Var root) {
        const Tensor& rv = val(root);
        if (rv.size() != 1)
            throw ShapeError("backward without a seed requires a scalar root, got " + rv.shape_str());
        backward(root, Tensor::scalar(1.0));
    }

    /// Backward from an arbitrary root with an explicit seed of equal shape.
    void backward(Var root, const Tensor& seed) {
        require_same_shape(val(root), seed, "backward seed");
        for (auto& n : nodes_) n.grad = Tensor();
        grad_buf(root).vec() = seed.vec();
        backward_visits_ = 0;
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad.empty() || !n.backward) continue;
            ++backward_visits_;
            n.backward(*this, Var{id});
        }
        // Flush parameter-leaf gradients into the store (accumulates across
        // samples until the store is zeroed).
        for (const auto& [slot, var] : param_nodes_) {
            const Node& n = nodes_[idx(var)];
            if (!n.grad.empty()) params_->grad(slot).vec() += n.grad.vec();
        }
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t backward_visits() const { return backward_visits_; }
    ParamStore* params() const { return params_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        int param_slot = -1;
        std::function<void(Tape&, Var)> backward;
    };

    static std::size_t idx(Var v) { return static_cast<std::size_t>(v.id); }

    Var push(Node&& n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::unordered_map<int, Var> param_nodes_;
    ParamStore* params_ = nullptr;
    bool grad_enabled_ = true;
    std::size_t backward_visits_ = 0;
};

} // namespace sva
