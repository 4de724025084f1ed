#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cral {

using Rng = std::mt19937_64;

/// Child seed for a named component: splitmix64(root ^ fnv1a64(tag)).
/// Stable across platforms and runs, so every consumer of randomness can be
/// re-derived from the single root seed of a run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

inline Rng make_rng(std::uint64_t root, std::string_view tag) { return Rng(derive_seed(root, tag)); }

}  // namespace cral
