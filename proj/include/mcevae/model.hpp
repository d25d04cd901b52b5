// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "mcevae/graph.hpp"
#include "mcevae/io.hpp"
#include "mcevae/lie.hpp"
#include "mcevae/nn.hpp"

namespace mcevae::model {

enum class ClusteringMode { Gmm, Single };

std::string to_string(ClusteringMode mode);
ClusteringMode parse_clustering_mode(const std::string& s);

struct ModelConfig {
    lie::GroupKind kind = lie::GroupKind::SE2;
    std::size_t image_size = 28;
    std::size_t n_zc = 10;
    std::size_t n_z = 3;
    std::vector<std::size_t> encoder_channels{32, 64, 128, 256};
    std::size_t cluster_hidden = 512;
    std::size_t variational_hidden = 512;
    std::size_t transform_hidden = 32;
    std::size_t decoder_hidden = 300;
    std::size_t decoder_depth = 2;
    double beta = 1.0;
    double alpha = 1.0;
    ClusteringMode clustering = ClusteringMode::Gmm;
    bool equivariance = true;
    /// Scales a unit-normal tau latent onto the transformation support.
    lie::TransformSupport support{};

    /// 0 when the equivariance extractor is disabled.
    std::size_t tau_dim() const;
    /// Noise coordinates per item: n_zc + n_z + tau_dim.
    std::size_t noise_dim() const;
    /// Flattened encoder output size.
    std::size_t zaug_dim() const;
    std::size_t pixels() const { return image_size * image_size; }

    void validate() const;
    io::KeyValues to_key_values() const;
    static ModelConfig from_key_values(const io::KeyValues& kv);
};

/// Mean and log standard deviation of a diagonal Gaussian posterior.
struct Posterior {
    graph::Var mu;
    graph::Var log_sigma;
};

struct LatentBundle {
    graph::Var z_c;
    graph::Var z;
    /// Unscaled tau sample; invalid when equivariance is off.
    graph::Var tau;
    Posterior cluster;
    Posterior variational;
    std::optional<Posterior> transform;
    Tensor eps;
};

struct ForwardOutput {
    graph::Var x_tilde;
    graph::Var x_hat;
    LatentBundle latents;
};

/// Heads of the three extractors before sampling.
struct Extracted {
    Posterior cluster;
    Posterior variational;
    std::optional<Posterior> transform;
};

enum class Phase { Train, Eval };

struct ForwardOptions {
    Phase phase = Phase::Train;
    /// Train phase only: whether batchnorm folds batch statistics into its
    /// running buffers.
    bool update_running_stats = true;
};

/// mu + eps * exp(log_sigma); eps is a constant.
graph::Var reparameterize(const graph::Var& mu, const graph::Var& log_sigma, const graph::Var& eps);

inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 2.0;

/// The network: augmented encoder, cluster/variational/equivariance
/// extractors, invariance decoder and equivariant reconstructor.
///
/// Eval-phase calls only read parameters and may run concurrently on
/// separate tapes.
class MceVae {
public:
    MceVae(ModelConfig config, std::uint64_t seed);
    MceVae(const MceVae&) = delete;
    MceVae& operator=(const MceVae&) = delete;
    MceVae(MceVae&&) = default;

    const ModelConfig& config() const noexcept { return config_; }
    graph::ParameterStore& params() noexcept { return store_; }
    const graph::ParameterStore& params() const noexcept { return store_; }

    /// x (B,1,S,S) -> z_aug (B, zaug_dim).
    graph::Var augmented_encode(graph::Tape& tape, const graph::Var& x, const ForwardOptions& opts);
    Extracted extract(graph::Tape& tape, const graph::Var& z_aug);
    /// (z_c, z) -> canonical reconstruction (B,1,S,S) in (0,1).
    graph::Var decode_canonical(graph::Tape& tape, const graph::Var& z_c, const graph::Var& z);
    /// Warps x_tilde by exp(scale * tau) where scale maps unit latents onto the
    /// transformation support.
    graph::Var reconstruct(const graph::Var& x_tilde, const graph::Var& tau) const;

    /// Full pipeline. eps has shape (B, noise_dim()), laid out as
    /// [z_c | z | tau] noise; zeros give the posterior means.
    ForwardOutput forward(graph::Tape& tape, const graph::Var& x, const Tensor& eps, const ForwardOptions& opts);

    Tensor draw_noise(std::size_t batch, std::mt19937_64& rng) const;

private:
    struct Head {
        nn::Linear hidden1, hidden2, out;
        std::size_t dim = 0;
    };
    Head make_head(const std::string& prefix, std::size_t hidden, std::size_t dim, nn::Rng& rng);
    Posterior run_head(graph::Tape& tape, const Head& head, const graph::Var& z_aug);
    void check_input(const graph::Var& x) const;

    ModelConfig config_;
    graph::ParameterStore store_;
    std::vector<nn::ConvBlock> encoder_;
    Head cluster_head_, variational_head_;
    std::optional<Head> transform_head_;
    std::vector<nn::GatedDense> decoder_;
    nn::Linear decoder_out_;
};

}  // namespace mcevae::model
