// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "mcevae/graph.hpp"
#include "mcevae/model.hpp"

// Loss terms. Sums run over pixels and latent coordinates; total_loss
// averages them over the batch.
namespace mcevae::objective {

/// Probabilities are clamped to this margin before taking logs.
inline constexpr double kProbClamp = 1e-7;

/// Bernoulli log-likelihood sum(t log p + (1 - t) log(1 - p)); <= 0.
graph::Var bce_loglik(const graph::Var& p, const graph::Var& t);

/// KL(N(mu, sigma^2) || N(0, 1)) summed over every coordinate and item.
graph::Var gauss_kl(const graph::Var& mu, const graph::Var& log_sigma);

/// Upper bound on the KL between the equimixture posterior and the
/// equimixture prior over n_C = mu_c.shape[1] one-hot-mean components:
/// (1/n_C) sum_k KL(q_k || p_k) where the two components differ only in
/// coordinate k, with prior mean 1 there. Summed over the batch.
graph::Var gmm_kl_upper_bound(const graph::Var& mu_c, const graph::Var& log_sigma_c);

enum class TrainingMode { Supervised, Unsupervised };

std::string to_string(TrainingMode mode);
TrainingMode parse_training_mode(const std::string& s);

/// Values of the second, transformed-input forward pass. They enter the
/// divergence as stop-gradient constants.
struct TransformedBranch {
    Tensor mu_c;
    Tensor mu_z;
    Tensor x_tilde;
};

/// Invariance penalty summed over the batch.
///  supervised:   -bce_loglik(x_tilde, x_gt)
///  unsupervised: |mu_c(x) - mu_c(Mx)|^2 + |mu_z(x) - mu_z(Mx)|^2
///                - bce_loglik(x_tilde(x), x_tilde(Mx))
/// Throws when the input required by `mode` is missing.
graph::Var invariance_divergence(TrainingMode mode, const model::ForwardOutput& x_branch,
                                 const TransformedBranch* transformed, const Tensor* x_gt);

struct LossBreakdown {
    graph::Var total;
    double recon_loglik = 0.0;
    double kl_zc = 0.0;
    double kl_z = 0.0;
    double kl_tau = 0.0;
    double invariance = 0.0;
    double total_value = 0.0;
};

/// -recon_loglik + beta (kl_zc + kl_z + kl_tau) + alpha D, every term
/// averaged over the batch. `divergence` is the batch-summed D; when absent
/// (or alpha == 0) the penalty is left out.
LossBreakdown total_loss(const model::ForwardOutput& out, const graph::Var& x, const model::ModelConfig& cfg,
                         const std::optional<graph::Var>& divergence);

}  // namespace mcevae::objective
