// SPDX-License-Identifier: Apache-2.0
#include "mcevae/graph.hpp"

#include <algorithm>

namespace mcevae::graph {

Parameter& ParameterStore::create(std::string name, Tensor init, bool trainable) {
    if (index_.contains(name)) {
        throw Error("parameter store: duplicate name '" + name + "'");
    }
    index_.emplace(name, params_.size());
    Tensor grad(init.shape());
    params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad), trainable});
    return params_.back();
}

Parameter& ParameterStore::at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw Error("parameter store: no parameter named '" + std::string(name) + "'");
    }
    return params_[it->second];
}

const Parameter& ParameterStore::at(std::string_view name) const {
    return const_cast<ParameterStore*>(this)->at(name);
}

bool ParameterStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
    has_gradients_ = false;
}

std::size_t ParameterStore::trainable_count() const {
    return static_cast<std::size_t>(
        std::count_if(params_.begin(), params_.end(), [](const Parameter& p) { return p.trainable; }));
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Shape& Var::shape() const { return value().shape(); }
std::size_t Var::size() const { return value().size(); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NonFiniteError("constant: non-finite input");
    return push(Node{std::move(value), {}, {}, {}, nullptr, false});
}

Var Tape::input(Tensor value) {
    if (!value.all_finite()) throw NonFiniteError("input: non-finite input");
    return push(Node{std::move(value), {}, {}, {}, nullptr, true});
}

Var Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    if (!p.value.all_finite()) throw NonFiniteError("parameter '" + p.name + "' is non-finite");
    Var v = push(Node{p.value, {}, {}, {}, &p, p.trainable});
    param_nodes_.emplace(&p, v.id());
    return v;
}

Var Tape::record(std::string_view op, Tensor value, std::vector<int> parents, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NonFiniteError(std::string(op) + ": non-finite output of shape " + shape_str(value.shape()));
    }
    bool needs = std::any_of(parents.begin(), parents.end(), [&](int id) { return requires_grad(id); });
    Node node{std::move(value), {}, std::move(parents), {}, nullptr, needs};
    if (needs) node.backward = std::move(backward);
    return push(std::move(node));
}

std::span<double> Tape::grad_sink(int id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) return {};
    if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape());
    return node.grad.data();
}

void Tape::backward(const Var& loss, ParameterStore* store) {
    if (backward_done_) {
        throw Error("backward: already called on this tape; reset() before recording a new graph");
    }
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    backward_done_ = true;
    auto sink = grad_sink(loss.id());
    if (sink.empty()) return;
    sink[0] = 1.0;
    for (int id = loss.id(); id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
        node.backward(*this, id);
    }
    for (auto& node : nodes_) {
        if (node.param == nullptr || node.grad.empty() || !node.param->trainable) continue;
        auto& acc = node.param->grad.storage();
        const auto& g = node.grad.storage();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
    if (store != nullptr) store->mark_gradients();
}

Tensor Tape::grad(const Var& v) const {
    const auto& node = nodes_.at(static_cast<std::size_t>(v.id()));
    if (node.grad.empty()) return Tensor(node.value.shape());
    return node.grad;
}

void Tape::reset() {
    nodes_.clear();
    param_nodes_.clear();
    backward_done_ = false;
}

}  // namespace mcevae::graph
