// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mcevae/graph.hpp"

// Differentiable operations over tape variables. Every op validates shapes,
// throws ShapeError naming itself and the offending shapes, and records a
// backward rule on the tape of its first argument.
//
// Binary elementwise ops broadcast when one operand's shape is a suffix of
// the other's (e.g. (B,N) with (N)) or when one operand has a single element.
namespace mcevae::ops {

using graph::Var;

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
/// Gradient passes only where lo <= a <= hi.
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Same value, but no gradient flows through to `a`.
Var stop_gradient(const Var& a);

struct Conv2dConfig {
    std::size_t stride = 2;
    std::size_t padding = 1;
};

/// x (B,C,H,W), weight (O,C,K,K), bias (O) -> (B,O,OH,OW).
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dConfig cfg = {});

enum class BatchNormMode { Train, Eval };

struct BatchNormConfig {
    BatchNormMode mode = BatchNormMode::Train;
    double momentum = 0.1;
    double eps = 1e-5;
    /// Train mode only: fold batch statistics into the running buffers.
    bool update_running = true;
};

/// Per-channel normalization of x (B,C,H,W). Train mode normalizes with batch
/// statistics; eval mode with the running buffers, which makes it affine.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, graph::Parameter& running_mean,
                graph::Parameter& running_var, const BatchNormConfig& cfg);

}  // namespace mcevae::ops
