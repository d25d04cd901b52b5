// SPDX-License-Identifier: Apache-2.0
#include "mcevae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "mcevae/checkpoint.hpp"
#include "mcevae/parallel.hpp"
#include "mcevae/stn.hpp"

namespace mcevae::trainer {

using graph::Tape;
using graph::Var;
using model::ForwardOptions;
using model::Phase;
using objective::TrainingMode;

void TrainConfig::validate(std::size_t train_size) const {
    if (epochs == 0) throw TrainingError("epochs must be >= 1");
    if (batch_size == 0) throw TrainingError("batch size must be >= 1");
    if (batch_size > train_size) {
        throw TrainingError("batch size " + std::to_string(batch_size) + " exceeds the training set size " +
                            std::to_string(train_size));
    }
    if (!(lr > 0.0)) throw TrainingError("learning rate must be > 0");
    if (eval_every == 0) throw TrainingError("eval cadence must be >= 1");
    if (n_transforms == 0) throw TrainingError("n_transforms must be >= 1");
}

std::string format_row(const MetricsRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", r.epoch,
                  r.split.c_str(), r.recon_bce_per_pixel, r.kl_zc, r.kl_z, r.kl_tau, r.invariance_penalty, r.total,
                  r.purity, r.nmi, r.latent_invariance);
    return buf;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
    std::ofstream os(path);
    if (!os) throw io::IoError("cannot write " + path.string());
    os << kMetricsHeader << '\n';
    for (const auto& r : rows) os << format_row(r) << '\n';
    if (!os) throw io::IoError("cannot write " + path.string());
}

std::size_t assign_cluster(std::span<const double> mu_c) {
    if (mu_c.empty()) throw Error("assign_cluster: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < mu_c.size(); ++i)
        if (mu_c[i] > mu_c[best]) best = i;
    return best;
}

ClusteringScores clustering_metrics(std::span<const std::size_t> assignments, std::span<const std::size_t> labels) {
    if (assignments.size() != labels.size()) {
        throw Error("clustering_metrics: " + std::to_string(assignments.size()) + " assignments for " +
                    std::to_string(labels.size()) + " labels");
    }
    if (assignments.empty()) throw Error("clustering_metrics: empty input");
    const double n = static_cast<double>(labels.size());
    std::map<std::pair<std::size_t, std::size_t>, double> joint;
    std::map<std::size_t, double> by_cluster, by_label;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        joint[{assignments[i], labels[i]}] += 1.0;
        by_cluster[assignments[i]] += 1.0;
        by_label[labels[i]] += 1.0;
    }
    std::map<std::size_t, double> best;
    double mi = 0.0;
    for (const auto& [key, count] : joint) {
        best[key.first] = std::max(best[key.first], count);
        mi += count / n * std::log(count * n / (by_cluster[key.first] * by_label[key.second]));
    }
    auto entropy = [n](const std::map<std::size_t, double>& m) {
        double h = 0.0;
        for (const auto& [k, c] : m) h -= c / n * std::log(c / n);
        return h;
    };
    ClusteringScores s;
    for (const auto& [k, c] : best) s.purity += c;
    s.purity /= n;
    const double denom = 0.5 * (entropy(by_cluster) + entropy(by_label));
    s.nmi = denom > 0.0 ? std::clamp(mi / denom, 0.0, 1.0) : 1.0;
    return s;
}

TransformSampler seeded_sampler(lie::GroupKind kind, const lie::TransformSupport& support, std::uint64_t seed) {
    support.validate();
    return [kind, support, seed](std::size_t key, std::size_t t) {
        std::mt19937_64 rng(derive_seed(derive_seed(seed, SeedStream::Eval, key), SeedStream::Eval, t));
        return lie::sample_transform(support, kind, rng);
    };
}

std::uint64_t invariance_seed(std::uint64_t run_seed) { return derive_seed(run_seed, SeedStream::Eval, 1); }
std::uint64_t validation_penalty_seed(std::uint64_t run_seed) { return derive_seed(run_seed, SeedStream::Eval, 2); }

namespace {

struct Range {
    std::size_t begin, end;
};

std::vector<Range> batches(std::size_t n, std::size_t batch_size) {
    std::vector<Range> out;
    for (std::size_t b = 0; b < n; b += batch_size) out.push_back({b, std::min(n, b + batch_size)});
    return out;
}

std::pair<Tensor, Tensor> means_of(model::MceVae& model, const Tensor& x) {
    Tape tape;
    ForwardOptions eval{Phase::Eval, false};
    auto e = model.extract(tape, model.augmented_encode(tape, tape.constant(x), eval));
    return {e.cluster.mu.value(), e.variational.mu.value()};
}

double squared_distance(const Tensor& a, const Tensor& b, std::size_t row) {
    const std::size_t w = a.dim(1);
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
        const double d = a[row * w + j] - b[row * w + j];
        s += d * d;
    }
    return s;
}

void copy_rows(const Tensor& src, std::size_t count, Tensor& dst, std::size_t offset) {
    const std::size_t per = src.size() / src.dim(0);
    std::copy_n(src.storage().begin(), count * per, dst.storage().begin() + static_cast<std::ptrdiff_t>(offset * per));
}

// Running sums of per-image loss terms.
struct TermSums {
    double recon = 0, kl_zc = 0, kl_z = 0, kl_tau = 0, invariance = 0, total = 0;
    std::size_t count = 0;

    void add(const objective::LossBreakdown& b, std::size_t n) {
        const double w = static_cast<double>(n);
        recon += b.recon_loglik * w;
        kl_zc += b.kl_zc * w;
        kl_z += b.kl_z * w;
        kl_tau += b.kl_tau * w;
        invariance += b.invariance * w;
        total += b.total_value * w;
        count += n;
    }
    void merge(const TermSums& o) {
        recon += o.recon;
        kl_zc += o.kl_zc;
        kl_z += o.kl_z;
        kl_tau += o.kl_tau;
        invariance += o.invariance;
        total += o.total;
        count += o.count;
    }
    void fill(MetricsRow& row, std::size_t pixels) const {
        const double n = static_cast<double>(count);
        row.recon_bce_per_pixel = -recon / n / static_cast<double>(pixels);
        row.kl_zc = kl_zc / n;
        row.kl_z = kl_z / n;
        row.kl_tau = kl_tau / n;
        row.invariance_penalty = invariance / n;
        row.total = total / n;
    }
};

void check_terms(const objective::LossBreakdown& b) {
    const std::pair<const char*, double> terms[] = {{"recon_loglik", b.recon_loglik}, {"kl_zc", b.kl_zc},
                                                    {"kl_z", b.kl_z},                 {"kl_tau", b.kl_tau},
                                                    {"invariance_penalty", b.invariance}, {"total", b.total_value}};
    for (const auto& [name, v] : terms)
        if (!std::isfinite(v)) throw TrainingError(std::string("non-finite loss term ") + name);
}

std::vector<std::size_t> labels_at(const data::AugmentedDataset& data, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data.labels[i]);
    return out;
}

std::vector<lie::AlgebraCoefficients> draw_transforms(std::span<const std::size_t> keys,
                                                      const TransformSampler& sampler, std::size_t t) {
    std::vector<lie::AlgebraCoefficients> out;
    out.reserve(keys.size());
    for (auto k : keys) out.push_back(sampler(k, t));
    return out;
}

// Second forward on the transformed input. Batch statistics only; the
// running buffers are left to the x branch.
objective::TransformedBranch transformed_branch(model::MceVae& model, const Tensor& mx, const Tensor& eps,
                                                const ForwardOptions& opts) {
    Tape tape;
    ForwardOptions o = opts;
    o.update_running_stats = false;
    auto out = model.forward(tape, tape.constant(mx), eps, o);
    return {out.latents.cluster.mu.value(), out.latents.variational.mu.value(), out.x_tilde.value()};
}

}  // namespace

std::pair<Tensor, Tensor> posterior_means(model::MceVae& model, const Tensor& images, std::size_t batch_size) {
    const auto& cfg = model.config();
    const std::size_t n = images.dim(0);
    Tensor mu_c({n, cfg.n_zc}), mu_z({n, cfg.n_z});
    const auto parts = batches(n, batch_size);
    parallel_for(parts.size(), [&](std::size_t p) {
        std::vector<std::size_t> idx(parts[p].end - parts[p].begin);
        std::iota(idx.begin(), idx.end(), parts[p].begin);
        auto [c, z] = means_of(model, data::gather(images, idx));
        copy_rows(c, idx.size(), mu_c, parts[p].begin);
        copy_rows(z, idx.size(), mu_z, parts[p].begin);
    });
    return {std::move(mu_c), std::move(mu_z)};
}

double latent_invariance_score(model::MceVae& model, const Tensor& images, std::span<const std::size_t> keys,
                               std::size_t n_transforms, const TransformSampler& sampler, std::size_t batch_size) {
    const std::size_t n = images.dim(0);
    if (keys.size() != n) throw Error("latent_invariance_score: one key per image required");
    if (n == 0 || n_transforms == 0) throw Error("latent_invariance_score: nothing to score");
    const auto parts = batches(n, batch_size);
    std::vector<double> partial(parts.size(), 0.0);
    const auto kind = model.config().kind;
    parallel_for(parts.size(), [&](std::size_t p) {
        std::vector<std::size_t> idx(parts[p].end - parts[p].begin);
        std::iota(idx.begin(), idx.end(), parts[p].begin);
        const Tensor x = data::gather(images, idx);
        const auto [c0, z0] = means_of(model, x);
        const auto batch_keys = keys.subspan(parts[p].begin, idx.size());
        for (std::size_t t = 0; t < n_transforms; ++t) {
            const auto taus = draw_transforms(batch_keys, sampler, t);
            const auto [c1, z1] = means_of(model, stn::transform_image(x, taus, kind));
            for (std::size_t r = 0; r < idx.size(); ++r)
                partial[p] += squared_distance(c0, c1, r) + squared_distance(z0, z1, r);
        }
    });
    return std::accumulate(partial.begin(), partial.end(), 0.0) / static_cast<double>(n * n_transforms);
}

Evaluation evaluate(model::MceVae& model, const data::AugmentedDataset& data, std::span<const std::size_t> indices,
                    TrainingMode mode, const TransformSampler& sampler, std::size_t batch_size) {
    if (indices.empty()) throw Error("evaluate: empty index set");
    if (mode == TrainingMode::Supervised && !data.x_gt) {
        throw Error("evaluate: supervised mode requires ground-truth images");
    }
    const auto& cfg = model.config();
    const auto parts = batches(indices.size(), batch_size);
    std::vector<TermSums> sums(parts.size());
    Evaluation ev;
    ev.mu_c = Tensor({indices.size(), cfg.n_zc});
    parallel_for(parts.size(), [&](std::size_t p) {
        const auto idx = indices.subspan(parts[p].begin, parts[p].end - parts[p].begin);
        const Tensor x = data::gather(data.x, idx);
        const Tensor eps({idx.size(), cfg.noise_dim()});
        const ForwardOptions opts{Phase::Eval, false};
        std::optional<objective::TransformedBranch> branch;
        std::optional<Tensor> x_gt;
        if (mode == TrainingMode::Unsupervised) {
            const auto taus = draw_transforms(idx, sampler, 0);
            branch = transformed_branch(model, stn::transform_image(x, taus, cfg.kind), eps, opts);
        } else {
            x_gt = data::gather(*data.x_gt, idx);
        }
        Tape tape;
        Var xv = tape.constant(x);
        auto out = model.forward(tape, xv, eps, opts);
        Var d = objective::invariance_divergence(mode, out, branch ? &*branch : nullptr, x_gt ? &*x_gt : nullptr);
        auto b = objective::total_loss(out, xv, cfg, d);
        sums[p].add(b, idx.size());
        copy_rows(out.latents.cluster.mu.value(), idx.size(), ev.mu_c, parts[p].begin);
    });
    TermSums all;
    for (const auto& s : sums) all.merge(s);
    all.fill(ev.row, cfg.pixels());
    ev.clusters.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        ev.clusters[i] = assign_cluster(ev.mu_c.data().subspan(i * cfg.n_zc, cfg.n_zc));
    const auto scores = clustering_metrics(ev.clusters, labels_at(data, indices));
    ev.row.purity = scores.purity;
    ev.row.nmi = scores.nmi;
    return ev;
}

TrainResult train(model::MceVae& model, const data::AugmentedDataset& data, const data::Split& split,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate(split.train.size());
    if (split.val.empty()) throw TrainingError("validation split is empty");
    const bool supervised = config.mode == TrainingMode::Supervised;
    if (supervised && !data.x_gt) throw TrainingError("supervised training requires ground-truth images");
    const auto& cfg = model.config();
    if (data.image_size() != cfg.image_size) {
        throw TrainingError("dataset images are " + std::to_string(data.image_size()) + " pixels wide, model expects " +
                            std::to_string(cfg.image_size));
    }

    TrainResult result;
    result.adam.config.lr = config.lr;
    const auto inv_sampler = seeded_sampler(cfg.kind, cfg.support, invariance_seed(config.seed));
    const auto val_sampler = seeded_sampler(cfg.kind, cfg.support, validation_penalty_seed(config.seed));
    const std::vector<std::size_t> inv_keys(
        split.train.begin(),
        split.train.begin() + static_cast<std::ptrdiff_t>(std::min(config.invariance_subset, split.train.size())));
    const Tensor inv_images = data::gather(data.x, inv_keys);
    const Tensor val_images = data::gather(data.x, split.val);
    if (!config.out_dir.empty()) std::filesystem::create_directories(config.out_dir);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::mt19937_64 rng(derive_seed(config.seed, SeedStream::Train, epoch));
        std::vector<std::size_t> order = split.train;
        std::shuffle(order.begin(), order.end(), rng);

        TermSums sums;
        std::vector<std::size_t> clusters;
        clusters.reserve(order.size());
        std::size_t step = 0;
        for (const auto& r : batches(order.size(), config.batch_size)) {
            ++step;
            const std::span<const std::size_t> idx(order.data() + r.begin, r.end - r.begin);
            const Tensor x = data::gather(data.x, idx);
            const Tensor eps = model.draw_noise(idx.size(), rng);
            const ForwardOptions opts{Phase::Train, true};
            try {
                std::optional<objective::TransformedBranch> branch;
                std::optional<Tensor> x_gt;
                if (supervised) {
                    x_gt = data::gather(*data.x_gt, idx);
                } else {
                    std::vector<lie::AlgebraCoefficients> taus;
                    taus.reserve(idx.size());
                    for (std::size_t i = 0; i < idx.size(); ++i)
                        taus.push_back(lie::sample_transform(cfg.support, cfg.kind, rng));
                    branch = transformed_branch(model, stn::transform_image(x, taus, cfg.kind), eps, opts);
                }
                Tape tape;
                Var xv = tape.constant(x);
                auto out = model.forward(tape, xv, eps, opts);
                Var d = objective::invariance_divergence(config.mode, out, branch ? &*branch : nullptr,
                                                         x_gt ? &*x_gt : nullptr);
                auto b = objective::total_loss(out, xv, cfg, d);
                check_terms(b);
                tape.backward(b.total, &model.params());
                optim::adam_step(model.params(), result.adam);
                sums.add(b, idx.size());
                const Tensor& mu = out.latents.cluster.mu.value();
                for (std::size_t i = 0; i < idx.size(); ++i)
                    clusters.push_back(assign_cluster(mu.data().subspan(i * cfg.n_zc, cfg.n_zc)));
            } catch (const NonFiniteError& e) {
                throw TrainingError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                                    e.what());
            } catch (const TrainingError& e) {
                throw TrainingError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                                    e.what());
            }
        }

        const std::size_t first = result.rows.size();
        MetricsRow train_row;
        train_row.epoch = epoch;
        train_row.split = "train";
        sums.fill(train_row, cfg.pixels());
        const auto scores = clustering_metrics(clusters, labels_at(data, order));
        train_row.purity = scores.purity;
        train_row.nmi = scores.nmi;
        train_row.latent_invariance =
            latent_invariance_score(model, inv_images, inv_keys, config.n_transforms, inv_sampler, config.batch_size);
        result.rows.push_back(train_row);

        if (epoch % config.eval_every == 0 || epoch == config.epochs) {
            auto ev = evaluate(model, data, split.val, config.mode, val_sampler, config.batch_size);
            ev.row.epoch = epoch;
            ev.row.split = "val";
            ev.row.latent_invariance = latent_invariance_score(model, val_images, split.val, config.n_transforms,
                                                               inv_sampler, config.batch_size);
            result.rows.push_back(ev.row);
        }

        if (!config.out_dir.empty()) {
            write_metrics_csv(config.out_dir / "metrics.csv", result.rows);
            if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
                checkpoint::save(model.params(), config.out_dir / ("checkpoint-epoch-" + std::to_string(epoch)));
            }
        }
        if (on_epoch) on_epoch(std::span<const MetricsRow>(result.rows).subspan(first));
    }
    if (!config.out_dir.empty()) checkpoint::save(model.params(), config.out_dir / "checkpoint");
    return result;
}

}  // namespace mcevae::trainer
