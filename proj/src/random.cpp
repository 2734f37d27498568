#include "isearle/random.hpp"

namespace isearle {

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Vector gaussian_vector(Rng& rng, Eigen::Index n, double stddev) {
  Vector v(n);
  if (stddev == 0.0) {
    v.setZero();
    return v;
  }
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

}  // namespace isearle
