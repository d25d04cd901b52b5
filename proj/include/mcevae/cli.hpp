// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

#include "mcevae/model.hpp"
#include "mcevae/tensor.hpp"

namespace mcevae::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2 };

/// Bad flags, unreadable inputs, or inconsistent artifacts.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Runs one subcommand (prepare, train, evaluate, reconstruct,
/// export-latents). Results go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Four rows (x, x_hat, x_gt, x_tilde) of n images of size s, separated by
/// 2-pixel white bands. Each tensor is (n,1,s,s) with values in [0,1].
struct Grid {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<unsigned char> pixels;
};
Grid make_grid(std::span<const Tensor* const> rows);
void write_pgm(const std::filesystem::path& path, const Grid& grid);

/// Finds config.kv beside a checkpoint directory (inside it, else its parent).
model::ModelConfig load_checkpoint_config(const std::filesystem::path& checkpoint_dir);

}  // namespace mcevae::cli
