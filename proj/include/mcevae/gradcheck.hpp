// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mcevae/graph.hpp"

namespace mcevae::gradcheck {

/// Comparison of analytic gradients against central differences
/// (f(x+h) - f(x-h)) / 2h. The relative error of one entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
/// entries whose true gradient is at the finite-difference noise level from
/// dominating the report.
struct Report {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool passed = true;
};

struct Options {
    double step = 1e-5;
    double tolerance = 1e-4;
    double floor = 1e-8;
    /// Entries compared per tensor; 0 checks all. Larger tensors are sampled.
    std::size_t max_entries = 0;
    std::uint64_t seed = 0;
};

/// f maps an input node to a scalar node on the same tape.
using ScalarFn = std::function<graph::Var(graph::Tape&, const graph::Var&)>;

Report grad_check(const ScalarFn& f, const Tensor& point, const Options& opts = {});

/// Loss over the parameters in `store`; called once per evaluation on a fresh
/// tape. Must be deterministic.
using LossFn = std::function<graph::Var(graph::Tape&)>;

struct ParameterReport {
    std::string name;
    Report report;
};

/// Checks every trainable parameter of `store`. Gradients in the store are
/// left zeroed.
std::vector<ParameterReport> grad_check_parameters(graph::ParameterStore& store, const LossFn& loss,
                                                   const Options& opts = {});

}  // namespace mcevae::gradcheck
