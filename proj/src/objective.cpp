// SPDX-License-Identifier: Apache-2.0
#include "mcevae/objective.hpp"

#include "mcevae/ops.hpp"

namespace mcevae::objective {

using graph::Var;

namespace {

Var one_minus(const Var& v) { return ops::add_scalar(ops::scale(v, -1.0), 1.0); }

// sum(sigma^2 - 1 - 2 log sigma) over every coordinate.
Var variance_terms(const Var& log_sigma) {
    return ops::sum(ops::sub(ops::exp(ops::scale(log_sigma, 2.0)), ops::add_scalar(ops::scale(log_sigma, 2.0), 1.0)));
}

}  // namespace

Var bce_loglik(const Var& p, const Var& t) {
    if (p.shape() != t.shape()) {
        throw ShapeError("bce_loglik: incompatible shapes " + shape_str(p.shape()) + " and " + shape_str(t.shape()));
    }
    Var pc = ops::clamp(p, kProbClamp, 1.0 - kProbClamp);
    Var ll = ops::add(ops::mul(t, ops::log(pc)), ops::mul(one_minus(t), ops::log(one_minus(pc))));
    return ops::sum(ll);
}

Var gauss_kl(const Var& mu, const Var& log_sigma) {
    return ops::scale(ops::add(ops::sum(ops::square(mu)), variance_terms(log_sigma)), 0.5);
}

Var gmm_kl_upper_bound(const Var& mu_c, const Var& log_sigma_c) {
    if (mu_c.value().rank() != 2 || mu_c.shape() != log_sigma_c.shape()) {
        throw ShapeError("gmm_kl_upper_bound: expected matching (B,n_C) inputs, got " + shape_str(mu_c.shape()) +
                         " and " + shape_str(log_sigma_c.shape()));
    }
    const double n_c = static_cast<double>(mu_c.shape()[1]);
    Var mean_terms = ops::sum(ops::square(ops::add_scalar(mu_c, -1.0)));
    return ops::scale(ops::add(mean_terms, variance_terms(log_sigma_c)), 0.5 / n_c);
}

std::string to_string(TrainingMode mode) { return mode == TrainingMode::Supervised ? "supervised" : "unsupervised"; }

TrainingMode parse_training_mode(const std::string& s) {
    if (s == "supervised") return TrainingMode::Supervised;
    if (s == "unsupervised") return TrainingMode::Unsupervised;
    throw Error("unknown training mode '" + s + "' (expected supervised or unsupervised)");
}

Var invariance_divergence(TrainingMode mode, const model::ForwardOutput& x_branch, const TransformedBranch* transformed,
                          const Tensor* x_gt) {
    auto& tape = x_branch.x_tilde.tape();
    if (mode == TrainingMode::Supervised) {
        if (x_gt == nullptr) throw Error("invariance_divergence: supervised mode requires ground-truth images");
        return ops::scale(bce_loglik(x_branch.x_tilde, tape.constant(*x_gt)), -1.0);
    }
    if (transformed == nullptr) {
        throw Error("invariance_divergence: unsupervised mode requires the transformed-input branch");
    }
    Var dc = ops::sub(x_branch.latents.cluster.mu, tape.constant(transformed->mu_c));
    Var dz = ops::sub(x_branch.latents.variational.mu, tape.constant(transformed->mu_z));
    Var latent = ops::add(ops::sum(ops::square(dc)), ops::sum(ops::square(dz)));
    return ops::sub(latent, bce_loglik(x_branch.x_tilde, tape.constant(transformed->x_tilde)));
}

LossBreakdown total_loss(const model::ForwardOutput& out, const Var& x, const model::ModelConfig& cfg,
                         const std::optional<Var>& divergence) {
    const double inv_b = 1.0 / static_cast<double>(x.shape()[0]);
    const auto& lat = out.latents;
    Var recon = ops::scale(bce_loglik(out.x_hat, x), inv_b);
    Var kl_zc = cfg.clustering == model::ClusteringMode::Gmm
                    ? gmm_kl_upper_bound(lat.cluster.mu, lat.cluster.log_sigma)
                    : gauss_kl(lat.cluster.mu, lat.cluster.log_sigma);
    kl_zc = ops::scale(kl_zc, inv_b);
    Var kl_z = ops::scale(gauss_kl(lat.variational.mu, lat.variational.log_sigma), inv_b);
    Var kl = ops::add(kl_zc, kl_z);

    LossBreakdown r;
    if (lat.transform) {
        Var kl_tau = ops::scale(gauss_kl(lat.transform->mu, lat.transform->log_sigma), inv_b);
        kl = ops::add(kl, kl_tau);
        r.kl_tau = kl_tau.value().item();
    }
    Var total = ops::add(ops::scale(recon, -1.0), ops::scale(kl, cfg.beta));
    if (divergence && cfg.alpha > 0.0) {
        Var d = ops::scale(*divergence, inv_b);
        total = ops::add(total, ops::scale(d, cfg.alpha));
        r.invariance = d.value().item();
    } else if (divergence) {
        r.invariance = divergence->value().item() * inv_b;
    }
    r.total = total;
    r.recon_loglik = recon.value().item();
    r.kl_zc = kl_zc.value().item();
    r.kl_z = kl_z.value().item();
    r.total_value = total.value().item();
    return r;
}

}  // namespace mcevae::objective
