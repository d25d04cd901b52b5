// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <random>
#include <span>

#include "mcevae/gradcheck.hpp"
#include "mcevae/model.hpp"
#include "mcevae/objective.hpp"

namespace mcevae::testing {

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

/// Directory holding images-idx3-ubyte / labels-idx1-ubyte.
std::filesystem::path mnist_dir();

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// Small 8x8 configuration for finite-difference checks.
model::ModelConfig tiny_config(lie::GroupKind kind = lie::GroupKind::SE2);

/// Full training objective of `mode` on a fixed 4-image batch, with the
/// transformed-input branch frozen at the starting parameters.
struct FullLossProblem {
    model::MceVae model;
    Tensor x, x_gt, eps;
    objective::TransformedBranch branch;
    objective::TrainingMode mode;

    graph::Var loss(graph::Tape& tape);
};
FullLossProblem make_full_loss_problem(objective::TrainingMode mode, std::uint64_t seed);

struct MonteCarlo {
    double mean = 0.0;
    double std_error = 0.0;
};

/// KL(q || p) between equal-weight mixtures over n_C = mu.size() components:
/// q_k is N(mu_k, sigma_k^2) in coordinate k and N(0, 1) elsewhere; p_k is
/// N(1, 1) in coordinate k and N(0, 1) elsewhere. Estimated by sampling q.
MonteCarlo mixture_kl_monte_carlo(std::span<const double> mu, std::span<const double> sigma, std::size_t samples,
                                  std::mt19937_64& rng);

/// Truncated power series sum_{k<terms} A^k / k! of the algebra matrix of t.
lie::Mat3 series_exp(const lie::AlgebraCoefficients& t, int terms = 30);

/// Square n x n image shifted by (dx, dy) pixels with zero fill:
/// out[i][j] = in[i - dy][j - dx].
std::vector<double> shift_oracle(std::span<const double> in, int n, int dx, int dy);

/// Square image rotated by quarter_turns * 90 degrees counter-clockwise as
/// displayed (rows pointing down): out[i][j] = in[n-1-j][i] per turn.
std::vector<double> rot90_oracle(std::span<const double> in, int n, int quarter_turns);

/// Options used for every parameter-level gradient check.
gradcheck::Options full_loss_gradcheck_options();

}  // namespace mcevae::testing
