// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcevae/data.hpp"
#include "mcevae/model.hpp"
#include "mcevae/objective.hpp"
#include "mcevae/optim.hpp"

namespace mcevae::trainer {

class TrainingError : public Error {
public:
    using Error::Error;
};

struct TrainConfig {
    objective::TrainingMode mode = objective::TrainingMode::Unsupervised;
    std::size_t epochs = 60;
    std::size_t batch_size = 100;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    /// Validation row every `eval_every` epochs (and always after the last).
    std::size_t eval_every = 1;
    /// Extra checkpoint every `checkpoint_every` epochs; 0 writes only the
    /// final one. Needs `out_dir`.
    std::size_t checkpoint_every = 0;
    /// When set, receives metrics.csv and checkpoints.
    std::filesystem::path out_dir;
    /// Transforms per image for the latent invariance score.
    std::size_t n_transforms = 8;
    /// Training images scored for latent invariance on the train row.
    std::size_t invariance_subset = 256;

    void validate(std::size_t train_size) const;
};

struct MetricsRow {
    std::size_t epoch = 0;
    std::string split;
    double recon_bce_per_pixel = 0.0;
    double kl_zc = 0.0;
    double kl_z = 0.0;
    double kl_tau = 0.0;
    double invariance_penalty = 0.0;
    double total = 0.0;
    double purity = 0.0;
    double nmi = 0.0;
    double latent_invariance = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,split,recon_bce_per_pixel,kl_zc,kl_z,kl_tau,invariance_penalty,total,purity,nmi,latent_invariance";

std::string format_row(const MetricsRow& row);

/// Index of the largest entry; ties go to the lowest index.
std::size_t assign_cluster(std::span<const double> mu_c);

struct ClusteringScores {
    double purity = 0.0;
    double nmi = 0.0;
};

/// Purity and NMI (mutual information over the arithmetic mean of the two
/// entropies). Two single-block partitions score NMI 1.
ClusteringScores clustering_metrics(std::span<const std::size_t> assignments, std::span<const std::size_t> labels);

/// Transform for image `key`, draw `t`.
using TransformSampler = std::function<lie::AlgebraCoefficients(std::size_t key, std::size_t t)>;

/// Uniform draws on `support`, each from an rng seeded by (seed, key, t).
TransformSampler seeded_sampler(lie::GroupKind kind, const lie::TransformSupport& support, std::uint64_t seed);

/// Mean over images and transforms of |mu_c(x) - mu_c(Mx)|^2 +
/// |mu_z(x) - mu_z(Mx)|^2 in eval mode. `keys[i]` identifies image i to the
/// sampler.
double latent_invariance_score(model::MceVae& model, const Tensor& images, std::span<const std::size_t> keys,
                               std::size_t n_transforms, const TransformSampler& sampler,
                               std::size_t batch_size = 100);

/// Posterior means in eval mode, batched: (mu_c (N,n_zc), mu_z (N,n_z)).
std::pair<Tensor, Tensor> posterior_means(model::MceVae& model, const Tensor& images, std::size_t batch_size = 100);

struct Evaluation {
    MetricsRow row;
    Tensor mu_c;
    std::vector<std::size_t> clusters;
};

/// Eval-mode pass with eps = 0 over `indices` of `data`. Unsupervised
/// penalties use one transform per image from `sampler` keyed by dataset
/// index. Batches are sharded across workers.
Evaluation evaluate(model::MceVae& model, const data::AugmentedDataset& data, std::span<const std::size_t> indices,
                    objective::TrainingMode mode, const TransformSampler& sampler, std::size_t batch_size = 100);

/// Seeds derived from a run seed for evaluation-time transforms.
std::uint64_t invariance_seed(std::uint64_t run_seed);
std::uint64_t validation_penalty_seed(std::uint64_t run_seed);

struct TrainResult {
    std::vector<MetricsRow> rows;
    optim::AdamState adam;
};

/// Called after each epoch with the rows appended for it.
using EpochCallback = std::function<void(std::span<const MetricsRow>)>;

/// Trains `model` in place on `split.train`, validating on `split.val`.
/// Throws TrainingError naming the loss term (or op) that became non-finite.
TrainResult train(model::MceVae& model, const data::AugmentedDataset& data, const data::Split& split,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);

}  // namespace mcevae::trainer
