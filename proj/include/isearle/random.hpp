#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "isearle/linalg.hpp"

namespace isearle {

using Rng = std::mt19937_64;

// FNV-1a; stable across platforms, used to derive per-string seeds.
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0);

Vector gaussian_vector(Rng& rng, Eigen::Index n, double stddev);

// Uniform in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);

}  // namespace isearle
