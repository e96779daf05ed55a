#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace neursplit {

using Rng = std::mt19937_64;

// Per-stage seed derived from the run seed: splitmix64(seed ^ fnv1a(stage)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage);

// Worker cap: NEURSPLIT_THREADS if set (>= 1), else hardware concurrency.
std::size_t thread_budget();

} // namespace neursplit
