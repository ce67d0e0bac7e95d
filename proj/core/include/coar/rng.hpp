#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace coar {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a; stable across platforms, used for seed splitting and config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

/// Sub-seed for a named random stream: splitmix64(root ^ fnv1a64(stream)).
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace coar
