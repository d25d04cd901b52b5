// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>

#include "mcevae/data.hpp"
#include "mcevae/stn.hpp"
#include "support.hpp"

using namespace mcevae;
using lie::GroupKind;
namespace fs = std::filesystem;

namespace {

fs::path images_file() { return mcevae::testing::mnist_dir() / "images-idx3-ubyte"; }
fs::path labels_file() { return mcevae::testing::mnist_dir() / "labels-idx1-ubyte"; }

void put_be32(std::ofstream& os, std::uint32_t v) {
    const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    os.write(b.data(), 4);
}

// Writes an IDX pair with `n` images of `rows` x `cols`. Pixel values and
// labels follow the item index.
void write_idx(const fs::path& dir, std::uint32_t n, std::uint32_t rows = 28, std::uint32_t cols = 28,
               std::uint32_t image_magic = data::kImagesMagic, std::uint32_t label_magic = data::kLabelsMagic,
               std::uint32_t label_count = 0) {
    std::ofstream img(dir / "img", std::ios::binary), lab(dir / "lab", std::ios::binary);
    put_be32(img, image_magic);
    put_be32(img, n);
    put_be32(img, rows);
    put_be32(img, cols);
    std::vector<char> pixels(static_cast<std::size_t>(n) * rows * cols);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<char>((i / (rows * cols)) % 256);
    img.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
    put_be32(lab, label_magic);
    put_be32(lab, label_count ? label_count : n);
    for (std::uint32_t i = 0; i < (label_count ? label_count : n); ++i) lab.put(static_cast<char>(i % 10));
}

// Header fields read straight from the bytes.
std::array<std::uint32_t, 4> hexdump_header(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::array<unsigned char, 16> b{};
    is.read(reinterpret_cast<char*>(b.data()), 16);
    std::array<std::uint32_t, 4> out{};
    for (int k = 0; k < 4; ++k) out[k] = (b[4 * k] << 24) | (b[4 * k + 1] << 16) | (b[4 * k + 2] << 8) | b[4 * k + 3];
    return out;
}

std::string load_error(const fs::path& img, const fs::path& lab) {
    try {
        data::load_idx(img, lab);
    } catch (const data::DataError& e) {
        return e.what();
    }
    return "";
}

const data::RawDataset& mnist() {
    static const data::RawDataset raw = data::load_idx(images_file(), labels_file());
    return raw;
}

}  // namespace

TEST(LoadIdx, BundledSubsetMatchesHeaders) {
    const auto h = hexdump_header(images_file());
    EXPECT_EQ(h[0], 2051u);
    const auto& raw = mnist();
    EXPECT_EQ(raw.size(), h[1]);
    EXPECT_EQ(raw.images.shape(), (Shape{h[1], 1, h[2], h[3]}));
    EXPECT_EQ(hexdump_header(labels_file())[1], h[1]);
    for (double v : raw.images.storage()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
    }
}

TEST(LoadIdx, PixelScalingMatchesRawBytes) {
    std::ifstream is(images_file(), std::ios::binary);
    is.seekg(16 + 784 * 3);
    std::vector<unsigned char> bytes(784);
    is.read(reinterpret_cast<char*>(bytes.data()), 784);
    for (std::size_t i = 0; i < 784; ++i) EXPECT_EQ(mnist().images[3 * 784 + i], bytes[i] / 255.0);
}

TEST(LoadIdx, LabelHistogramSpansAllClasses) {
    std::ifstream is(labels_file(), std::ios::binary);
    is.seekg(8);
    std::array<std::size_t, 10> counted{};
    for (int c; (c = is.get()) != EOF;) ++counted.at(static_cast<std::size_t>(c));
    std::array<std::size_t, 10> hist{};
    for (auto l : mnist().labels) ++hist[l];
    EXPECT_EQ(hist, counted);
    for (auto c : hist) EXPECT_GT(c, 0u);
}

TEST(LoadIdx, FullSizeHeaderIsRead) {
    const auto dir = mcevae::testing::scratch_dir("idx-60000");
    write_idx(dir, 60000);
    EXPECT_EQ(hexdump_header(dir / "img")[1], 60000u);
    const auto raw = data::load_idx(dir / "img", dir / "lab");
    EXPECT_EQ(raw.images.shape(), (Shape{60000, 1, 28, 28}));
    EXPECT_EQ(raw.labels[59999], 9);
    EXPECT_EQ(raw.images[59999 * 784], (59999 % 256) / 255.0);
    fs::remove_all(dir);
}

TEST(LoadIdx, ErrorsAreDescriptive) {
    const auto dir = mcevae::testing::scratch_dir("idx-errors");
    write_idx(dir, 5, 28, 28, 2049);
    EXPECT_NE(load_error(dir / "img", dir / "lab").find("2051"), std::string::npos);
    write_idx(dir, 5, 28, 28, data::kImagesMagic, 2051);
    EXPECT_NE(load_error(dir / "img", dir / "lab").find("2049"), std::string::npos);
    write_idx(dir, 5, 28, 28, data::kImagesMagic, data::kLabelsMagic, 6);
    EXPECT_NE(load_error(dir / "img", dir / "lab").find("count"), std::string::npos);

    write_idx(dir, 5);
    fs::resize_file(dir / "img", 16 + 784 * 4);
    EXPECT_NE(load_error(dir / "img", dir / "lab").find("truncated"), std::string::npos);
    fs::resize_file(dir / "img", 10);
    EXPECT_NE(load_error(dir / "img", dir / "lab").find("truncated"), std::string::npos);
    write_idx(dir, 5);
    fs::resize_file(dir / "lab", 11);
    EXPECT_NE(load_error(dir / "img", dir / "lab").find("truncated"), std::string::npos);

    const auto missing = dir / "nope";
    EXPECT_NE(load_error(missing, dir / "lab").find(missing.string()), std::string::npos);
    fs::remove_all(dir);
}

TEST(Augment, SeededRegenerationIsBitwise) {
    const auto raw = data::take(mnist(), 200);
    const auto a = data::augment(raw, GroupKind::SE2, {}, 5), b = data::augment(raw, GroupKind::SE2, {}, 5);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.tau, b.tau);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(data::augment(raw, GroupKind::SE2, {}, 6).x, a.x);
}

TEST(Augment, TransformsStayInSupport) {
    const auto raw = data::take(mnist(), 500);
    const lie::TransformSupport support{1.2, 0.3};
    const auto se2 = data::augment(raw, GroupKind::SE2, support, 7);
    const auto so2 = data::augment(raw, GroupKind::SO2, support, 7);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        EXPECT_LE(std::abs(se2.tau[i].omega), 1.2);
        EXPECT_LE(std::abs(se2.tau[i].u), 0.3);
        EXPECT_LE(std::abs(se2.tau[i].v), 0.3);
        EXPECT_EQ(so2.tau[i].u, 0.0);
        EXPECT_EQ(so2.tau[i].v, 0.0);
    }
}

TEST(Augment, StoredImagesRegenerateFromGroundTruth) {
    const auto raw = data::take(mnist(), 100);
    for (auto kind : {GroupKind::SE2, GroupKind::SO2}) {
        const auto d = data::augment(raw, kind, {}, 8);
        ASSERT_TRUE(d.x_gt);
        EXPECT_EQ(*d.x_gt, raw.images);
        const auto again = stn::transform_image(*d.x_gt, d.tau, kind);
        for (std::size_t i = 0; i < again.size(); ++i) ASSERT_NEAR(again[i], d.x[i], 1e-12);
    }
}

TEST(Augment, MeanIntensityIsPreserved) {
    const auto raw = data::take(mnist(), 100);
    double gt = 0;
    for (double v : raw.images.storage()) gt += v;
    for (auto kind : {GroupKind::SE2, GroupKind::SO2}) {
        const auto d = data::augment(raw, kind, {}, 9);
        double m = 0;
        for (double v : d.x.storage()) m += v;
        EXPECT_LT(std::abs(m - gt), 0.1 * gt) << lie::to_string(kind);
    }
}

TEST(Augment, LatticeTransformsMatchIndexOracle) {
    // augment warps with the model's sampler; on MNIST digits a quarter turn
    // through it equals the array rotation.
    const auto raw = data::take(mnist(), 20);
    const auto d = data::augment(raw, GroupKind::SO2, {}, 10);
    for (std::size_t k = 0; k < raw.size(); ++k) {
        std::vector<lie::AlgebraCoefficients> quarter{{std::numbers::pi / 2, 0, 0}};
        const auto img = data::gather(raw.images, std::vector<std::size_t>{k});
        const auto y = stn::transform_image(img, quarter, GroupKind::SO2);
        for (std::size_t i = 0; i < 28; ++i)
            for (std::size_t j = 0; j < 28; ++j) ASSERT_EQ(y[i * 28 + j], img[(27 - j) * 28 + i]);
    }
    EXPECT_EQ(d.size(), raw.size());
}

TEST(Split, Sizes) {
    EXPECT_EQ(data::train_count(70000), 60000u);
    EXPECT_EQ(data::train_count(7), 6u);
    EXPECT_EQ(data::train_count(2000), 1715u);
    const auto s = data::split(70000, {3});
    EXPECT_EQ(s.train.size(), 60000u);
    EXPECT_EQ(s.val.size(), 10000u);
    const auto t = data::split(7, {3});
    EXPECT_EQ(t.train.size(), 6u);
    EXPECT_EQ(t.val.size(), 1u);
}

TEST(Split, IsAShuffledPartition) {
    const auto s = data::split(1000, {4});
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> iota(1000);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(all, iota);
    EXPECT_FALSE(std::is_sorted(s.train.begin(), s.train.end()));
    EXPECT_EQ(data::split(1000, {4}).train, s.train);
    EXPECT_NE(data::split(1000, {5}).train, s.train);
}

TEST(Gather, SelectsRows) {
    Tensor t({3, 2}, {0, 1, 2, 3, 4, 5});
    EXPECT_EQ(data::gather(t, std::vector<std::size_t>{2, 0}).storage(), (std::vector<double>{4, 5, 0, 1}));
    EXPECT_THROW(data::gather(t, std::vector<std::size_t>{3}), Error);
}

TEST(Prepare, SeedFanOut) {
    const auto raw = data::take(mnist(), 70);
    const auto p = data::prepare(raw, GroupKind::SO2, 17);
    EXPECT_EQ(p.data.x, data::augment(raw, GroupKind::SO2, {}, 17).x);
    EXPECT_EQ(p.split.train, data::split(70, p.split_spec).train);
    EXPECT_EQ(p.split.train.size(), 60u);
    EXPECT_NE(p.split_spec.seed, 17u);
}

TEST(Cache, RoundTrip) {
    const auto dir = mcevae::testing::scratch_dir("cache");
    const auto p = data::prepare(data::take(mnist(), 50), GroupKind::SE2, 11, {1.0, 0.4});
    data::save_cache(dir, p.data, p.split_spec, {{"subset", "50"}});
    const auto c = data::load_cache(dir);
    EXPECT_EQ(c.data.x, p.data.x);
    ASSERT_TRUE(c.data.x_gt);
    EXPECT_EQ(*c.data.x_gt, *p.data.x_gt);
    EXPECT_EQ(c.data.tau, p.data.tau);
    EXPECT_EQ(c.data.labels, p.data.labels);
    EXPECT_EQ(c.data.kind, GroupKind::SE2);
    EXPECT_EQ(c.data.support.t_max, 0.4);
    EXPECT_EQ(c.split.train, p.split.train);
    EXPECT_EQ(c.manifest.at("subset"), "50");
    EXPECT_EQ(c.manifest.at("format"), data::kCacheFormat);
    EXPECT_EQ(c.fingerprint, data::load_cache(dir).fingerprint);

    auto stripped = p.data;
    stripped.x_gt.reset();
    data::save_cache(dir, stripped, p.split_spec);
    const auto s = data::load_cache(dir);
    EXPECT_FALSE(s.data.x_gt);
    EXPECT_NE(s.fingerprint, c.fingerprint);
    fs::remove_all(dir);
}

TEST(Cache, CorruptionIsAnError) {
    const auto dir = mcevae::testing::scratch_dir("cache-bad");
    const auto p = data::prepare(data::take(mnist(), 10), GroupKind::SO2, 12);
    data::save_cache(dir, p.data, p.split_spec);
    fs::resize_file(dir / "x.bin", 100);
    EXPECT_THROW(data::load_cache(dir), Error);
    EXPECT_THROW(data::load_cache(dir / "missing"), Error);
    fs::remove_all(dir);
}
