// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "mcevae/graph.hpp"

namespace mcevae::optim {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates for every trainable parameter, in store
/// order.
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// One bias-corrected Adam update of every trainable parameter, then zeroes
/// the gradients. Throws if no backward pass populated the gradients since
/// the previous step.
void adam_step(graph::ParameterStore& store, AdamState& state);

}  // namespace mcevae::optim
