// SPDX-License-Identifier: Apache-2.0
#include "mcevae/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mcevae/parallel.hpp"
#include "mcevae/stn.hpp"

namespace mcevae::data {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

RawDataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
    const auto img = read_bytes(images_path);
    const auto lab = read_bytes(labels_path);
    if (img.size() < 16) throw DataError("truncated IDX header in " + images_path.string());
    if (lab.size() < 8) throw DataError("truncated IDX header in " + labels_path.string());
    if (be32(img, 0) != kImagesMagic) {
        throw DataError("bad magic " + std::to_string(be32(img, 0)) + " in " + images_path.string() +
                        " (expected 2051 for images)");
    }
    if (be32(lab, 0) != kLabelsMagic) {
        throw DataError("bad magic " + std::to_string(be32(lab, 0)) + " in " + labels_path.string() +
                        " (expected 2049 for labels)");
    }
    const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    const std::size_t n_labels = be32(lab, 4);
    if (n != n_labels) {
        throw DataError("image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels));
    }
    if (n == 0 || rows == 0 || cols == 0) throw DataError("empty IDX dataset in " + images_path.string());
    if (img.size() < 16 + n * rows * cols) throw DataError("truncated pixel data in " + images_path.string());
    if (lab.size() < 8 + n) throw DataError("truncated label data in " + labels_path.string());

    RawDataset raw;
    raw.images = Tensor({n, 1, rows, cols});
    for (std::size_t i = 0; i < n * rows * cols; ++i) raw.images[i] = static_cast<double>(img[16 + i]) / 255.0;
    raw.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n));
    for (auto l : raw.labels)
        if (l > 9) throw DataError("label " + std::to_string(l) + " out of range 0..9 in " + labels_path.string());
    return raw;
}

RawDataset take(const RawDataset& raw, std::size_t n) {
    if (n == 0 || n > raw.size()) {
        throw DataError("subset of " + std::to_string(n) + " requested from " + std::to_string(raw.size()) + " images");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return {gather(raw.images, idx), std::vector<std::uint8_t>(raw.labels.begin(), raw.labels.begin() + static_cast<std::ptrdiff_t>(n))};
}

AugmentedDataset augment(const RawDataset& raw, lie::GroupKind kind, const lie::TransformSupport& support,
                         std::uint64_t seed) {
    support.validate();
    AugmentedDataset out;
    out.kind = kind;
    out.support = support;
    out.seed = seed;
    out.labels = raw.labels;
    out.x_gt = raw.images;
    out.x = Tensor(raw.images.shape());
    out.tau.resize(raw.size());
    const auto& shape = raw.images.shape();
    const std::size_t per = numel(shape) / shape[0];
    Shape one{1, shape[1], shape[2], shape[3]};
    parallel_for(raw.size(), [&](std::size_t i) {
        std::mt19937_64 rng(derive_seed(seed, SeedStream::Augment, i));
        out.tau[i] = lie::sample_transform(support, kind, rng);
        Tensor src(one, std::vector<double>(raw.images.storage().begin() + static_cast<std::ptrdiff_t>(i * per),
                                            raw.images.storage().begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
        Tensor moved = stn::transform_image(src, std::span(&out.tau[i], 1), kind);
        std::copy(moved.storage().begin(), moved.storage().end(),
                  out.x.storage().begin() + static_cast<std::ptrdiff_t>(i * per));
    });
    return out;
}

std::size_t train_count(std::size_t n) { return (6 * n + 6) / 7; }

Split split(std::size_t n, const SplitSpec& spec) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(spec.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t k = train_count(n);
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    return s;
}

Tensor gather(const Tensor& t, std::span<const std::size_t> indices) {
    if (t.rank() == 0) throw ShapeError("gather: scalar tensor");
    Shape shape = t.shape();
    const std::size_t per = t.size() / shape[0];
    shape[0] = indices.size();
    Tensor out(shape);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= t.dim(0)) throw ShapeError("gather: index " + std::to_string(indices[k]) + " out of range");
        std::copy_n(t.storage().begin() + static_cast<std::ptrdiff_t>(indices[k] * per), per,
                    out.storage().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return out;
}

Prepared prepare(const RawDataset& raw, lie::GroupKind kind, std::uint64_t seed, const lie::TransformSupport& support) {
    Prepared p{augment(raw, kind, support, seed), SplitSpec{derive_seed(seed, SeedStream::Split)}, {}};
    p.split = split(p.data.size(), p.split_spec);
    return p;
}

void save_cache(const fs::path& dir, const AugmentedDataset& data, const SplitSpec& spec, const io::KeyValues& extra) {
    fs::create_directories(dir);
    io::KeyValues kv = extra;
    kv["format"] = kCacheFormat;
    kv["kind"] = lie::to_string(data.kind);
    kv["omega_max"] = fmt_double(data.support.omega_max);
    kv["t_max"] = fmt_double(data.support.t_max);
    kv["seed"] = std::to_string(data.seed);
    kv["split.seed"] = std::to_string(spec.seed);
    kv["split.train_fraction"] = "6/7";
    kv["count"] = std::to_string(data.size());
    kv["count.train"] = std::to_string(train_count(data.size()));
    kv["count.val"] = std::to_string(data.size() - train_count(data.size()));
    kv["image_size"] = std::to_string(data.image_size());
    kv["ground_truth"] = data.x_gt ? "yes" : "no";
    io::write_key_values(dir / "manifest.txt", kv);

    auto write_blob = [&](const std::string& name, std::span<const double> values) {
        std::ofstream os(dir / name, std::ios::binary);
        io::write_f64_le(os, values);
        if (!os) throw io::IoError("cannot write " + (dir / name).string());
    };
    write_blob("x.bin", data.x.data());
    if (data.x_gt) write_blob("x_gt.bin", data.x_gt->data());
    std::vector<double> tau;
    for (const auto& t : data.tau) tau.insert(tau.end(), {t.omega, t.u, t.v});
    write_blob("tau.bin", tau);
    std::ofstream ls(dir / "labels.bin", std::ios::binary);
    ls.write(reinterpret_cast<const char*>(data.labels.data()), static_cast<std::streamsize>(data.labels.size()));
    if (!ls) throw io::IoError("cannot write " + (dir / "labels.bin").string());
}

Cache load_cache(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.txt")) throw DataError("no dataset cache at " + dir.string());
    Cache c;
    c.manifest = io::read_key_values(dir / "manifest.txt");
    c.fingerprint = io::fnv1a(io::read_text(dir / "manifest.txt"));
    const std::string src = (dir / "manifest.txt").string();
    const auto& kv = c.manifest;
    if (io::require(kv, "format", src) != kCacheFormat) throw DataError("unsupported dataset format in " + src);
    auto& d = c.data;
    std::size_t n = 0, s = 0;
    try {
        d.kind = lie::parse_group_kind(io::require(kv, "kind", src));
        d.support.omega_max = std::stod(io::require(kv, "omega_max", src));
        d.support.t_max = std::stod(io::require(kv, "t_max", src));
        d.seed = std::stoull(io::require(kv, "seed", src));
        c.split_spec.seed = std::stoull(io::require(kv, "split.seed", src));
        n = std::stoul(io::require(kv, "count", src));
        s = std::stoul(io::require(kv, "image_size", src));
    } catch (const std::logic_error& e) {
        throw DataError("malformed value in " + src + " (" + e.what() + ")");
    }
    const bool has_gt = io::require(kv, "ground_truth", src) == "yes";

    auto read_blob = [&](const std::string& name, Shape shape) {
        std::ifstream is(dir / name, std::ios::binary);
        if (!is) throw DataError("missing " + (dir / name).string());
        Tensor t(std::move(shape));
        io::read_f64_le(is, t.data(), (dir / name).string());
        return t;
    };
    d.x = read_blob("x.bin", {n, 1, s, s});
    if (has_gt) d.x_gt = read_blob("x_gt.bin", {n, 1, s, s});
    Tensor tau = read_blob("tau.bin", {n, 3});
    d.tau.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.tau[i] = {tau[3 * i], tau[3 * i + 1], tau[3 * i + 2]};
    d.labels.resize(n);
    std::ifstream ls(dir / "labels.bin", std::ios::binary);
    ls.read(reinterpret_cast<char*>(d.labels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(ls.gcount()) != n) throw DataError("truncated " + (dir / "labels.bin").string());
    c.split = split(n, c.split_spec);
    return c;
}

}  // namespace mcevae::data
