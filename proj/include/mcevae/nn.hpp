// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>

#include "mcevae/graph.hpp"
#include "mcevae/ops.hpp"

namespace mcevae::nn {

using Rng = std::mt19937_64;

/// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// y = x W + b, with W stored as (in, out).
struct Linear {
    graph::Parameter* weight = nullptr;
    graph::Parameter* bias = nullptr;

    static Linear create(graph::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                         Rng& rng);
    graph::Var operator()(graph::Tape& tape, const graph::Var& x) const;
};

/// h = linear_a(x) * sigmoid(linear_b(x)).
struct GatedDense {
    Linear value;
    Linear gate;

    static GatedDense create(graph::ParameterStore& store, const std::string& prefix, std::size_t in,
                             std::size_t out, Rng& rng);
    graph::Var operator()(graph::Tape& tape, const graph::Var& x) const;
};

/// conv -> batchnorm -> relu.
struct ConvBlock {
    graph::Parameter* weight = nullptr;
    graph::Parameter* bias = nullptr;
    graph::Parameter* gamma = nullptr;
    graph::Parameter* beta = nullptr;
    graph::Parameter* running_mean = nullptr;
    graph::Parameter* running_var = nullptr;
    ops::Conv2dConfig conv;

    static ConvBlock create(graph::ParameterStore& store, const std::string& prefix, std::size_t in_channels,
                            std::size_t out_channels, std::size_t kernel, ops::Conv2dConfig conv, Rng& rng);
    graph::Var operator()(graph::Tape& tape, const graph::Var& x, const ops::BatchNormConfig& bn) const;
};

}  // namespace mcevae::nn
