// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "mcevae/graph.hpp"

namespace mcevae::checkpoint {

inline constexpr int kFormatVersion = 1;

/// Writes `dir/params.manifest` (text: version line, then one
/// `name rank dims... byte_offset` line per parameter in store order) and
/// `dir/params.bin` (little-endian float64 values in manifest order).
void save(const graph::ParameterStore& store, const std::filesystem::path& dir);

/// Loads values into an existing store. Every stored parameter must appear
/// with an identical shape; mismatches throw naming the parameter.
void load(graph::ParameterStore& store, const std::filesystem::path& dir);

}  // namespace mcevae::checkpoint
