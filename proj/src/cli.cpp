// SPDX-License-Identifier: Apache-2.0
#include "mcevae/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <vector>

#include "mcevae/checkpoint.hpp"
#include "mcevae/data.hpp"
#include "mcevae/parallel.hpp"
#include "mcevae/trainer.hpp"

namespace mcevae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kSeparator = 2;

json key_values_json(const io::KeyValues& kv) {
    json j = json::object();
    for (const auto& [k, v] : kv) j[k] = v;
    return j;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream os(path);
    os << j.dump(2) << '\n';
    if (!os) throw io::IoError("cannot write " + path.string());
}

data::Cache open_cache(const fs::path& dir) {
    try {
        return data::load_cache(dir);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

// The cache must match the model the checkpoint was trained for.
void check_compatible(const model::ModelConfig& cfg, const data::AugmentedDataset& data) {
    if (cfg.kind != data.kind) {
        throw UsageError("model.kind differs: checkpoint " + lie::to_string(cfg.kind) + ", data " +
                         lie::to_string(data.kind));
    }
    if (cfg.image_size != data.image_size()) {
        throw UsageError("model.image_size differs: checkpoint " + std::to_string(cfg.image_size) + ", data " +
                         std::to_string(data.image_size()));
    }
}

model::MceVae open_model(const fs::path& checkpoint_dir, const data::AugmentedDataset& data) {
    model::ModelConfig cfg;
    try {
        cfg = load_checkpoint_config(checkpoint_dir);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    check_compatible(cfg, data);
    model::MceVae m(cfg, 0);
    try {
        checkpoint::load(m.params(), checkpoint_dir);
    } catch (const io::IoError& e) {
        throw UsageError(e.what());
    }
    return m;
}

const std::vector<std::size_t>& split_indices(const data::Cache& cache, const std::string& which) {
    return which == "train" ? cache.split.train : cache.split.val;
}

struct PrepareArgs {
    std::string images, labels, kind = "se2", out;
    std::uint64_t seed = 0;
    std::size_t subset = 0;
    bool drop_ground_truth = false;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
    lie::GroupKind kind;
    try {
        kind = lie::parse_group_kind(a.kind);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    data::RawDataset raw;
    try {
        raw = data::load_idx(a.images, a.labels);
        if (a.subset > 0) raw = data::take(raw, a.subset);
    } catch (const data::DataError& e) {
        throw UsageError(e.what());
    }
    auto prepared = data::prepare(raw, kind, a.seed);
    auto& augmented = prepared.data;
    if (a.drop_ground_truth) augmented.x_gt.reset();
    const auto& spec = prepared.split_spec;
    io::KeyValues extra{{"source.images", a.images},
                        {"source.labels", a.labels},
                        {"source.subset", std::to_string(a.subset)},
                        {"tool.version", kToolVersion}};
    data::save_cache(a.out, augmented, spec, extra);
    const std::size_t n = augmented.size(), n_train = data::train_count(n);
    out << "images " << n << "\ntrain " << n_train << "\nval " << (n - n_train) << "\n";
    out << "split " << n_train << "/" << (n - n_train) << "\n";
    return kOk;
}

struct TrainArgs {
    std::string data, mode = "unsupervised", clustering = "gmm", equivariance = "on", out;
    std::size_t epochs = 60, batch = 100, eval_every = 1, checkpoint_every = 0;
    double lr = 1e-3, alpha = 1.0, beta = 1.0;
    std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    const auto cache = open_cache(a.data);
    model::ModelConfig mcfg;
    trainer::TrainConfig tcfg;
    try {
        mcfg.kind = cache.data.kind;
        mcfg.image_size = cache.data.image_size();
        mcfg.alpha = a.alpha;
        mcfg.beta = a.beta;
        mcfg.clustering = model::parse_clustering_mode(a.clustering);
        if (a.equivariance != "on" && a.equivariance != "off") throw Error("--equivariance must be on or off");
        mcfg.equivariance = a.equivariance == "on";
        mcfg.validate();
        tcfg.mode = objective::parse_training_mode(a.mode);
        tcfg.epochs = a.epochs;
        tcfg.batch_size = a.batch;
        tcfg.lr = a.lr;
        tcfg.seed = a.seed;
        tcfg.eval_every = a.eval_every;
        tcfg.checkpoint_every = a.checkpoint_every;
        tcfg.out_dir = a.out;
        tcfg.validate(cache.split.train.size());
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (tcfg.mode == objective::TrainingMode::Supervised && !cache.data.x_gt) {
        throw UsageError("supervised mode needs ground-truth images, but the cache at " + a.data + " has none");
    }

    fs::create_directories(a.out);
    io::KeyValues kv = mcfg.to_key_values();
    kv["train.mode"] = objective::to_string(tcfg.mode);
    kv["train.epochs"] = std::to_string(tcfg.epochs);
    kv["train.batch_size"] = std::to_string(tcfg.batch_size);
    kv["train.lr"] = std::to_string(tcfg.lr);
    kv["train.seed"] = std::to_string(tcfg.seed);
    io::write_key_values(fs::path(a.out) / "config.kv", kv);

    const std::uint64_t init_seed = derive_seed(a.seed, SeedStream::Init);
    json manifest{{"tool", "mcevae"},
                  {"tool_version", kToolVersion},
                  {"command", argv},
                  {"config", key_values_json(kv)},
                  {"seeds",
                   {{"run", a.seed},
                    {"init", init_seed},
                    {"invariance", trainer::invariance_seed(a.seed)},
                    {"validation_penalty", trainer::validation_penalty_seed(a.seed)}}},
                  {"dataset",
                   {{"path", fs::absolute(a.data).string()},
                    {"fingerprint", hex64(cache.fingerprint)},
                    {"images", cache.data.size()},
                    {"train", cache.split.train.size()},
                    {"val", cache.split.val.size()}}},
                  {"threads", worker_count()}};

    model::MceVae m(mcfg, init_seed);
    std::vector<std::string> checkpoints;
    for (std::size_t e = 1; tcfg.checkpoint_every > 0 && e <= tcfg.epochs; ++e)
        if (e % tcfg.checkpoint_every == 0) checkpoints.push_back("checkpoint-epoch-" + std::to_string(e));
    checkpoints.push_back("checkpoint");
    manifest["checkpoints"] = checkpoints;
    manifest["metrics"] = "metrics.csv";
    write_json(fs::path(a.out) / "manifest.json", manifest);

    trainer::train(m, cache.data, cache.split, tcfg, [&](std::span<const trainer::MetricsRow> rows) {
        for (const auto& r : rows) out << trainer::format_row(r) << "\n";
        out.flush();
    });
    return kOk;
}

struct EvalArgs {
    std::string checkpoint, data, split = "val", mode = "unsupervised", out;
    std::size_t n = 8;
    std::uint64_t seed = 0;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
    const auto cache = open_cache(a.data);
    auto m = open_model(a.checkpoint, cache.data);
    objective::TrainingMode mode;
    try {
        mode = objective::parse_training_mode(a.mode);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (mode == objective::TrainingMode::Supervised && !cache.data.x_gt) {
        throw UsageError("supervised evaluation needs ground-truth images");
    }
    const auto& idx = split_indices(cache, a.split);
    const auto& cfg = m.config();
    auto ev = trainer::evaluate(m, cache.data, idx, mode,
                                trainer::seeded_sampler(cfg.kind, cfg.support, trainer::validation_penalty_seed(a.seed)));
    ev.row.split = a.split;
    ev.row.latent_invariance = trainer::latent_invariance_score(
        m, data::gather(cache.data.x, idx), idx, 8,
        trainer::seeded_sampler(cfg.kind, cfg.support, trainer::invariance_seed(a.seed)));
    out << trainer::kMetricsHeader << "\n" << trainer::format_row(ev.row) << "\n";
    return kOk;
}

int cmd_reconstruct(const EvalArgs& a, std::ostream& out) {
    const auto cache = open_cache(a.data);
    auto m = open_model(a.checkpoint, cache.data);
    const auto& idx = split_indices(cache, a.split);
    if (a.n == 0 || a.n > idx.size()) {
        throw UsageError("--n must be in 1.." + std::to_string(idx.size()) + " for the " + a.split + " split");
    }
    if (!cache.data.x_gt) throw UsageError("reconstruction grids need ground-truth images in the cache");
    const std::span<const std::size_t> chosen(idx.data(), a.n);
    const Tensor x = data::gather(cache.data.x, chosen);
    const Tensor x_gt = data::gather(*cache.data.x_gt, chosen);
    graph::Tape tape;
    auto fwd = m.forward(tape, tape.constant(x), Tensor({a.n, m.config().noise_dim()}),
                         model::ForwardOptions{model::Phase::Eval, false});
    const Tensor* rows[] = {&x, &fwd.x_hat.value(), &x_gt, &fwd.x_tilde.value()};
    const Grid grid = make_grid(rows);
    write_pgm(a.out, grid);
    out << "wrote " << a.out << " (" << grid.width << "x" << grid.height << ")\n";
    return kOk;
}

int cmd_export_latents(const EvalArgs& a, std::ostream& out) {
    const auto cache = open_cache(a.data);
    auto m = open_model(a.checkpoint, cache.data);
    const auto& idx = split_indices(cache, a.split);
    auto [mu_c, mu_z] = trainer::posterior_means(m, data::gather(cache.data.x, idx));
    const std::size_t k = m.config().n_zc;
    std::ofstream os(a.out);
    if (!os) throw UsageError("cannot write " + a.out);
    os << "label,cluster";
    for (std::size_t j = 0; j < k; ++j) os << ",mu_c_" << j;
    os << "\n";
    char buf[32];
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto row = mu_c.data().subspan(i * k, k);
        os << int(cache.data.labels[idx[i]]) << "," << trainer::assign_cluster(row);
        for (double v : row) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            os << buf;
        }
        os << "\n";
    }
    if (!os) throw io::IoError("write failed for " + a.out);
    out << "wrote " << idx.size() << " rows to " << a.out << "\n";
    return kOk;
}

}  // namespace

Grid make_grid(std::span<const Tensor* const> rows) {
    if (rows.empty()) throw Error("make_grid: no rows");
    const Shape& s = rows[0]->shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != s[3]) throw ShapeError("make_grid: expected (n,1,s,s), got " + shape_str(s));
    const std::size_t n = s[0], size = s[2];
    for (const Tensor* r : rows)
        if (r->shape() != s) throw ShapeError("make_grid: rows differ in shape");
    Grid g;
    g.width = n * size + (n - 1) * kSeparator;
    g.height = rows.size() * size + (rows.size() - 1) * kSeparator;
    g.pixels.assign(g.width * g.height, 255);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            for (std::size_t i = 0; i < size; ++i) {
                for (std::size_t j = 0; j < size; ++j) {
                    const double v = std::clamp((*rows[r])[(c * size + i) * size + j], 0.0, 1.0);
                    const std::size_t y = r * (size + kSeparator) + i, x = c * (size + kSeparator) + j;
                    g.pixels[y * g.width + x] = static_cast<unsigned char>(std::lround(v * 255.0));
                }
            }
        }
    }
    return g;
}

void write_pgm(const fs::path& path, const Grid& grid) {
    std::ofstream os(path, std::ios::binary);
    os << "P5\n" << grid.width << " " << grid.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(grid.pixels.data()), static_cast<std::streamsize>(grid.pixels.size()));
    if (!os) throw io::IoError("cannot write " + path.string());
}

model::ModelConfig load_checkpoint_config(const fs::path& checkpoint_dir) {
    if (!fs::is_directory(checkpoint_dir)) throw io::IoError("no checkpoint directory at " + checkpoint_dir.string());
    for (const auto& p : {checkpoint_dir / "config.kv", checkpoint_dir.parent_path() / "config.kv"}) {
        if (fs::exists(p)) return model::ModelConfig::from_key_values(io::read_key_values(p));
    }
    throw io::IoError("no config.kv in or beside " + checkpoint_dir.string());
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-clustering equivariant VAE"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    PrepareArgs prep;
    auto* prepare = app.add_subcommand("prepare", "Build a transformed dataset cache from MNIST IDX files");
    prepare->add_option("--images", prep.images, "IDX image file")->required();
    prepare->add_option("--labels", prep.labels, "IDX label file")->required();
    prepare->add_option("--kind", prep.kind, "Transformation group")->check(CLI::IsMember({"so2", "se2"}));
    prepare->add_option("--seed", prep.seed, "Seed");
    prepare->add_option("--subset", prep.subset, "Keep only the first N images (0 = all)");
    prepare->add_option("--out", prep.out, "Cache directory")->required();
    prepare->add_flag("--drop-ground-truth", prep.drop_ground_truth, "Do not store the untransformed images");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train a model on a dataset cache");
    train->add_option("--data", tr.data, "Dataset cache directory")->required();
    train->add_option("--mode", tr.mode, "Training mode")->check(CLI::IsMember({"supervised", "unsupervised"}));
    train->add_option("--epochs", tr.epochs, "Epochs");
    train->add_option("--batch", tr.batch, "Minibatch size");
    train->add_option("--lr", tr.lr, "Adam learning rate");
    train->add_option("--alpha", tr.alpha, "Invariance penalty weight");
    train->add_option("--beta", tr.beta, "KL weight");
    train->add_option("--clustering", tr.clustering, "Cluster latent prior")->check(CLI::IsMember({"gmm", "single"}));
    train->add_option("--equivariance", tr.equivariance, "Equivariance extractor")->check(CLI::IsMember({"on", "off"}));
    train->add_option("--seed", tr.seed, "Seed");
    train->add_option("--eval-every", tr.eval_every, "Validate every N epochs");
    train->add_option("--checkpoint-every", tr.checkpoint_every, "Extra checkpoint every N epochs (0 = final only)");
    train->add_option("--out", tr.out, "Output directory")->required();

    EvalArgs ev, rec, lat;
    auto add_common = [](CLI::App* cmd, EvalArgs& a) {
        cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
        cmd->add_option("--data", a.data, "Dataset cache directory")->required();
        cmd->add_option("--split", a.split, "Split")->check(CLI::IsMember({"train", "val"}));
    };
    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on one split");
    add_common(evaluate, ev);
    evaluate->add_option("--mode", ev.mode, "Penalty mode")->check(CLI::IsMember({"supervised", "unsupervised"}));
    evaluate->add_option("--seed", ev.seed, "Seed for evaluation transforms");
    auto* reconstruct = app.add_subcommand("reconstruct", "Write a PGM grid of x, x_hat, x_gt and x_tilde");
    add_common(reconstruct, rec);
    reconstruct->add_option("--n", rec.n, "Images per row");
    reconstruct->add_option("--out", rec.out, "Output PGM file")->required();
    auto* export_latents = app.add_subcommand("export-latents", "Write cluster posterior means as CSV");
    add_common(export_latents, lat);
    export_latents->add_option("--out", lat.out, "Output CSV file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*prepare) return cmd_prepare(prep, out);
        if (*train) return cmd_train(tr, std::vector<std::string>(argv, argv + argc), out);
        if (*evaluate) return cmd_evaluate(ev, out);
        if (*reconstruct) return cmd_reconstruct(rec, out);
        if (*export_latents) return cmd_export_latents(lat, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}

}  // namespace mcevae::cli
