// SPDX-License-Identifier: Apache-2.0
#include "mcevae/model.hpp"

#include <sstream>

#include "mcevae/ops.hpp"
#include "mcevae/stn.hpp"

namespace mcevae::model {

using graph::Tape;
using graph::Var;

std::string to_string(ClusteringMode mode) { return mode == ClusteringMode::Gmm ? "gmm" : "single"; }

ClusteringMode parse_clustering_mode(const std::string& s) {
    if (s == "gmm") return ClusteringMode::Gmm;
    if (s == "single") return ClusteringMode::Single;
    throw Error("unknown clustering mode '" + s + "' (expected gmm or single)");
}

std::size_t ModelConfig::tau_dim() const { return equivariance ? lie::coefficient_dim(kind) : 0; }

std::size_t ModelConfig::noise_dim() const { return n_zc + n_z + tau_dim(); }

std::size_t ModelConfig::zaug_dim() const {
    std::size_t s = image_size;
    for (std::size_t i = 0; i < encoder_channels.size(); ++i) s = (s + 2 - 3) / 2 + 1;
    return encoder_channels.back() * s * s;
}

void ModelConfig::validate() const {
    if (image_size < 2) throw Error("model config: image_size must be at least 2");
    if (n_zc == 0 || n_z == 0) throw Error("model config: latent dimensions must be >= 1");
    if (encoder_channels.empty()) throw Error("model config: encoder needs at least one layer");
    for (auto c : encoder_channels)
        if (c == 0) throw Error("model config: encoder channel widths must be >= 1");
    if (cluster_hidden == 0 || variational_hidden == 0 || transform_hidden == 0 || decoder_hidden == 0) {
        throw Error("model config: hidden widths must be >= 1");
    }
    if (!(beta > 0.0)) throw Error("model config: beta must be > 0");
    if (!(alpha >= 0.0)) throw Error("model config: alpha must be >= 0");
    support.validate();
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(std::stoul(item));
    return out;
}

}  // namespace

io::KeyValues ModelConfig::to_key_values() const {
    return {
        {"model.kind", lie::to_string(kind)},
        {"model.image_size", std::to_string(image_size)},
        {"model.n_zc", std::to_string(n_zc)},
        {"model.n_z", std::to_string(n_z)},
        {"model.encoder_channels", join(encoder_channels)},
        {"model.cluster_hidden", std::to_string(cluster_hidden)},
        {"model.variational_hidden", std::to_string(variational_hidden)},
        {"model.transform_hidden", std::to_string(transform_hidden)},
        {"model.decoder_hidden", std::to_string(decoder_hidden)},
        {"model.decoder_depth", std::to_string(decoder_depth)},
        {"model.beta", fmt_double(beta)},
        {"model.alpha", fmt_double(alpha)},
        {"model.clustering", to_string(clustering)},
        {"model.equivariance", equivariance ? "on" : "off"},
        {"model.omega_max", fmt_double(support.omega_max)},
        {"model.t_max", fmt_double(support.t_max)},
    };
}

ModelConfig ModelConfig::from_key_values(const io::KeyValues& kv) {
    const std::string src = "model config";
    auto get = [&](const std::string& k) { return io::require(kv, k, src); };
    ModelConfig c;
    try {
        c.kind = lie::parse_group_kind(get("model.kind"));
        c.image_size = std::stoul(get("model.image_size"));
        c.n_zc = std::stoul(get("model.n_zc"));
        c.n_z = std::stoul(get("model.n_z"));
        c.encoder_channels = split_sizes(get("model.encoder_channels"));
        c.cluster_hidden = std::stoul(get("model.cluster_hidden"));
        c.variational_hidden = std::stoul(get("model.variational_hidden"));
        c.transform_hidden = std::stoul(get("model.transform_hidden"));
        c.decoder_hidden = std::stoul(get("model.decoder_hidden"));
        c.decoder_depth = std::stoul(get("model.decoder_depth"));
        c.beta = std::stod(get("model.beta"));
        c.alpha = std::stod(get("model.alpha"));
        c.clustering = parse_clustering_mode(get("model.clustering"));
        const auto& eq = get("model.equivariance");
        if (eq != "on" && eq != "off") throw Error("model.equivariance must be on or off");
        c.equivariance = eq == "on";
        c.support.omega_max = std::stod(get("model.omega_max"));
        c.support.t_max = std::stod(get("model.t_max"));
    } catch (const std::logic_error& e) {
        throw io::IoError("model config: malformed value (" + std::string(e.what()) + ")");
    }
    c.validate();
    return c;
}

Var reparameterize(const Var& mu, const Var& log_sigma, const Var& eps) {
    return ops::add(mu, ops::mul(eps, ops::exp(log_sigma)));
}

MceVae::MceVae(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    nn::Rng rng(seed);
    std::size_t in = 1;
    for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
        const std::size_t out = config_.encoder_channels[i];
        encoder_.push_back(nn::ConvBlock::create(store_, "encoder." + std::to_string(i), in, out, 3,
                                                 ops::Conv2dConfig{2, 1}, rng));
        in = out;
    }
    cluster_head_ = make_head("cluster", config_.cluster_hidden, config_.n_zc, rng);
    variational_head_ = make_head("variational", config_.variational_hidden, config_.n_z, rng);
    if (config_.equivariance) {
        transform_head_ = make_head("transform", config_.transform_hidden, config_.tau_dim(), rng);
    }
    std::size_t width = config_.n_zc + config_.n_z;
    for (std::size_t i = 0; i < config_.decoder_depth; ++i) {
        decoder_.push_back(nn::GatedDense::create(store_, "decoder." + std::to_string(i), width,
                                                  config_.decoder_hidden, rng));
        width = config_.decoder_hidden;
    }
    decoder_out_ = nn::Linear::create(store_, "decoder.out", width, config_.pixels(), rng);
}

MceVae::Head MceVae::make_head(const std::string& prefix, std::size_t hidden, std::size_t dim, nn::Rng& rng) {
    Head h;
    h.hidden1 = nn::Linear::create(store_, prefix + ".hidden1", config_.zaug_dim(), hidden, rng);
    h.hidden2 = nn::Linear::create(store_, prefix + ".hidden2", hidden, hidden, rng);
    h.out = nn::Linear::create(store_, prefix + ".out", hidden, 2 * dim, rng);
    h.dim = dim;
    return h;
}

Posterior MceVae::run_head(Tape& tape, const Head& head, const Var& z_aug) {
    auto h = ops::sigmoid(head.hidden1(tape, z_aug));
    h = ops::sigmoid(head.hidden2(tape, h));
    auto o = head.out(tape, h);
    return {ops::slice(o, 1, 0, head.dim),
            ops::clamp(ops::slice(o, 1, head.dim, 2 * head.dim), kLogSigmaMin, kLogSigmaMax)};
}

void MceVae::check_input(const Var& x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != config_.image_size || s[3] != config_.image_size) {
        throw ShapeError("model: expected input (B,1," + std::to_string(config_.image_size) + "," +
                         std::to_string(config_.image_size) + "), got " + shape_str(s));
    }
}

Var MceVae::augmented_encode(Tape& tape, const Var& x, const ForwardOptions& opts) {
    check_input(x);
    ops::BatchNormConfig bn;
    bn.mode = opts.phase == Phase::Train ? ops::BatchNormMode::Train : ops::BatchNormMode::Eval;
    bn.update_running = opts.update_running_stats;
    Var h = x;
    for (const auto& block : encoder_) h = block(tape, h, bn);
    return ops::reshape(h, {x.shape()[0], config_.zaug_dim()});
}

Extracted MceVae::extract(Tape& tape, const Var& z_aug) {
    Extracted e{run_head(tape, cluster_head_, z_aug), run_head(tape, variational_head_, z_aug), std::nullopt};
    if (transform_head_) e.transform = run_head(tape, *transform_head_, z_aug);
    return e;
}

Var MceVae::decode_canonical(Tape& tape, const Var& z_c, const Var& z) {
    Var h = ops::concat({z_c, z}, 1);
    for (const auto& layer : decoder_) h = layer(tape, h);
    h = ops::sigmoid(decoder_out_(tape, h));
    const std::size_t s = config_.image_size;
    return ops::reshape(h, {z_c.shape()[0], 1, s, s});
}

Var MceVae::reconstruct(const Var& x_tilde, const Var& tau) const {
    const std::size_t d = lie::coefficient_dim(config_.kind);
    std::vector<double> scale{config_.support.omega_max};
    if (d == 3) {
        scale.push_back(config_.support.t_max);
        scale.push_back(config_.support.t_max);
    }
    Var s = tau.tape().constant(Tensor({d}, std::move(scale)));
    return stn::transform_image(x_tilde, ops::mul(tau, s), config_.kind);
}

ForwardOutput MceVae::forward(Tape& tape, const Var& x, const Tensor& eps, const ForwardOptions& opts) {
    check_input(x);
    const std::size_t B = x.shape()[0];
    if (eps.shape() != Shape{B, config_.noise_dim()}) {
        throw ShapeError("forward: noise must be " + shape_str({B, config_.noise_dim()}) + ", got " +
                         shape_str(eps.shape()));
    }
    Var z_aug = augmented_encode(tape, x, opts);
    Extracted e = extract(tape, z_aug);
    Var noise = tape.constant(eps);
    const std::size_t a = config_.n_zc, b = a + config_.n_z;

    ForwardOutput out;
    out.latents.cluster = e.cluster;
    out.latents.variational = e.variational;
    out.latents.transform = e.transform;
    out.latents.eps = eps;
    out.latents.z_c = reparameterize(e.cluster.mu, e.cluster.log_sigma, ops::slice(noise, 1, 0, a));
    out.latents.z = reparameterize(e.variational.mu, e.variational.log_sigma, ops::slice(noise, 1, a, b));
    out.x_tilde = decode_canonical(tape, out.latents.z_c, out.latents.z);
    if (e.transform) {
        out.latents.tau = reparameterize(e.transform->mu, e.transform->log_sigma,
                                         ops::slice(noise, 1, b, config_.noise_dim()));
        out.x_hat = reconstruct(out.x_tilde, out.latents.tau);
    } else {
        out.x_hat = out.x_tilde;
    }
    return out;
}

Tensor MceVae::draw_noise(std::size_t batch, std::mt19937_64& rng) const {
    Tensor eps({batch, config_.noise_dim()});
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& v : eps.storage()) v = n01(rng);
    return eps;
}

}  // namespace mcevae::model
