// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mcevae/io.hpp"
#include "mcevae/lie.hpp"

namespace mcevae::data {

class DataError : public Error {
public:
    using Error::Error;
};

inline constexpr std::uint32_t kImagesMagic = 2051;  // 0x00000803
inline constexpr std::uint32_t kLabelsMagic = 2049;  // 0x00000801

struct RawDataset {
    Tensor images;  // (N,1,H,W), values in [0,1]
    std::vector<std::uint8_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Reads an MNIST IDX image/label file pair; pixels are scaled by 1/255.
RawDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// First `n` items.
RawDataset take(const RawDataset& raw, std::size_t n);

struct AugmentedDataset {
    Tensor x;                    // transformed images
    std::optional<Tensor> x_gt;  // untransformed originals
    std::vector<lie::AlgebraCoefficients> tau;
    std::vector<std::uint8_t> labels;
    lie::GroupKind kind = lie::GroupKind::SE2;
    lie::TransformSupport support{};
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const { return x.dim(2); }
};

/// One transformed copy per image: tau_i ~ sample_transform with an rng
/// seeded from (seed, i), x_i = transform_image(x_gt_i, tau_i).
AugmentedDataset augment(const RawDataset& raw, lie::GroupKind kind, const lie::TransformSupport& support,
                         std::uint64_t seed);

/// 6:1 train/validation partition, shuffled by `seed`.
struct SplitSpec {
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// ceil(6N/7).
std::size_t train_count(std::size_t n);
Split split(std::size_t n, const SplitSpec& spec);

/// Rows `indices` of an (N,...) tensor.
Tensor gather(const Tensor& t, std::span<const std::size_t> indices);

/// augment + split with the seed fan-out shared by every entry point: the
/// augmentation uses `seed` directly, the split a seed derived from it.
struct Prepared {
    AugmentedDataset data;
    SplitSpec split_spec;
    Split split;
};
Prepared prepare(const RawDataset& raw, lie::GroupKind kind, std::uint64_t seed,
                 const lie::TransformSupport& support = {});

/// On-disk dataset: manifest.txt (key=value) plus little-endian float64
/// blobs x.bin, x_gt.bin (optional), tau.bin and one byte per label in
/// labels.bin.
struct Cache {
    AugmentedDataset data;
    SplitSpec split_spec;
    Split split;
    io::KeyValues manifest;
    /// FNV-1a of the manifest text.
    std::uint64_t fingerprint = 0;
};

inline constexpr const char* kCacheFormat = "mcevae-dataset/1";

void save_cache(const std::filesystem::path& dir, const AugmentedDataset& data, const SplitSpec& spec,
                const io::KeyValues& extra = {});
Cache load_cache(const std::filesystem::path& dir);

}  // namespace mcevae::data
