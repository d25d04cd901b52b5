// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>

#include "mcevae/tensor.hpp"

// Small binary/text helpers shared by the checkpoint, dataset cache and CLI.
namespace mcevae::io {

class IoError : public Error {
public:
    using Error::Error;
};

void write_f64_le(std::ostream& os, std::span<const double> values);
/// Fills `out`; throws IoError mentioning `what` on a short read.
void read_f64_le(std::istream& is, std::span<double> out, const std::string& what);

/// Ordered `key=value` lines; '#' starts a comment line.
using KeyValues = std::map<std::string, std::string>;

void write_key_values(const std::filesystem::path& path, const KeyValues& kv);
KeyValues read_key_values(const std::filesystem::path& path);

/// Value for `key`, or throws IoError naming the key and the file.
const std::string& require(const KeyValues& kv, const std::string& key, const std::string& source);

std::string read_text(const std::filesystem::path& path);

/// 64-bit FNV-1a, used to fingerprint caches in run manifests.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace mcevae::io
