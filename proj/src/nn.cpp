// SPDX-License-Identifier: Apache-2.0
#include "mcevae/nn.hpp"

#include <cmath>

namespace mcevae::nn {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.storage()) v = dist(rng);
    return t;
}

Linear Linear::create(graph::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                      Rng& rng) {
    Linear l;
    l.weight = &store.create(prefix + ".weight", kaiming_uniform({in, out}, in, rng));
    l.bias = &store.create(prefix + ".bias", Tensor({out}));
    return l;
}

graph::Var Linear::operator()(graph::Tape& tape, const graph::Var& x) const {
    return ops::add(ops::matmul(x, tape.param(*weight)), tape.param(*bias));
}

GatedDense GatedDense::create(graph::ParameterStore& store, const std::string& prefix, std::size_t in,
                              std::size_t out, Rng& rng) {
    GatedDense g;
    g.value = Linear::create(store, prefix + ".value", in, out, rng);
    g.gate = Linear::create(store, prefix + ".gate", in, out, rng);
    return g;
}

graph::Var GatedDense::operator()(graph::Tape& tape, const graph::Var& x) const {
    return ops::mul(value(tape, x), ops::sigmoid(gate(tape, x)));
}

ConvBlock ConvBlock::create(graph::ParameterStore& store, const std::string& prefix, std::size_t in_channels,
                            std::size_t out_channels, std::size_t kernel, ops::Conv2dConfig conv, Rng& rng) {
    ConvBlock c;
    const std::size_t fan_in = in_channels * kernel * kernel;
    c.weight = &store.create(prefix + ".conv.weight",
                             kaiming_uniform({out_channels, in_channels, kernel, kernel}, fan_in, rng));
    c.bias = &store.create(prefix + ".conv.bias", Tensor({out_channels}));
    c.gamma = &store.create(prefix + ".bn.gamma", Tensor({out_channels}, 1.0));
    c.beta = &store.create(prefix + ".bn.beta", Tensor({out_channels}));
    c.running_mean = &store.create(prefix + ".bn.running_mean", Tensor({out_channels}), false);
    c.running_var = &store.create(prefix + ".bn.running_var", Tensor({out_channels}, 1.0), false);
    c.conv = conv;
    return c;
}

graph::Var ConvBlock::operator()(graph::Tape& tape, const graph::Var& x, const ops::BatchNormConfig& bn) const {
    auto h = ops::conv2d(x, tape.param(*weight), tape.param(*bias), conv);
    h = ops::batchnorm2d(h, tape.param(*gamma), tape.param(*beta), *running_mean, *running_var, bn);
    return ops::relu(h);
}

}  // namespace mcevae::nn
