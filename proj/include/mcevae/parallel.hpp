// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace mcevae {

/// Worker threads to use: MCEVAE_THREADS when set to a positive integer,
/// otherwise the hardware concurrency (at least 1).
std::size_t worker_count();

/// Calls body(i) for i in [0, n) across worker threads. Each index runs
/// exactly once; callers write results into per-index slots so the outcome
/// does not depend on scheduling. Rethrows the first exception.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Independent seed for a named purpose derived from one run seed.
enum class SeedStream : std::uint64_t { Init = 1, Augment = 2, Split = 3, Train = 4, Eval = 5 };

std::uint64_t derive_seed(std::uint64_t base, SeedStream stream, std::uint64_t index = 0);

}  // namespace mcevae
