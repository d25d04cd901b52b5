// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mcevae/tensor.hpp"

namespace mcevae::graph {

/// A named learnable tensor (or a non-trainable buffer such as batchnorm
/// running statistics) with a persistent gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

/// Owns every parameter of a model. References returned by create() stay
/// valid for the lifetime of the store.
class ParameterStore {
public:
    Parameter& create(std::string name, Tensor init, bool trainable = true);

    Parameter& at(std::string_view name);
    const Parameter& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::deque<Parameter>& all() noexcept { return params_; }
    const std::deque<Parameter>& all() const noexcept { return params_; }
    std::size_t size() const noexcept { return params_.size(); }

    void zero_grad();
    /// Set by Tape::backward, cleared by zero_grad.
    bool has_gradients() const noexcept { return has_gradients_; }
    void mark_gradients() noexcept { has_gradients_ = true; }

    std::size_t trainable_count() const;

private:
    std::deque<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
    bool has_gradients_ = false;
};

class Tape;

/// Handle to a node recorded on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    int id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }

    const Tensor& value() const;
    const Shape& shape() const;
    std::size_t size() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Propagates the gradient of a node into its inputs. Receives the tape and
/// the id of the node being processed.
using BackwardFn = std::function<void(Tape&, int)>;

/// Records operations in execution order, which is a topological order of
/// the graph, and replays them in reverse for gradients.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives gradient.
    Var constant(Tensor value);
    /// Leaf that receives gradient (used for checks w.r.t. inputs).
    Var input(Tensor value);
    /// Leaf bound to a stored parameter; repeated calls return the same node.
    Var param(Parameter& p);

    /// Appends an op result. Throws NonFiniteError naming `op` when the value
    /// contains NaN or Inf. The node requires grad iff any parent does.
    Var record(std::string_view op, Tensor value, std::vector<int> parents, BackwardFn backward);

    /// Reverse sweep from a scalar loss. Parameter gradients are added to the
    /// owning ParameterStore accumulators.
    void backward(const Var& loss, ParameterStore* store = nullptr);

    /// Gradient of a node after backward; zeros if none reached it.
    Tensor grad(const Var& v) const;

    const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    /// Gradient buffer of node `id` as a writable span, or an empty span when
    /// the node does not require grad.
    std::span<double> grad_sink(int id);
    std::span<const double> out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.data(); }

    std::size_t size() const noexcept { return nodes_.size(); }
    bool backward_done() const noexcept { return backward_done_; }
    void reset();

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    bool backward_done_ = false;
};

}  // namespace mcevae::graph
