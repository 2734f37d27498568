#include "isearle/linalg.hpp"

#include "isearle/errors.hpp"

namespace isearle {

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw InputError("cosine: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine undefined for a zero-norm vector");
  return a.dot(b) / (na * nb);
}

Vector cosine_grad_b(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine undefined for a zero-norm vector");
  const double c = a.dot(b) / (na * nb);
  return a / (na * nb) - c * b / (nb * nb);
}

Vector normalized(const Vector& v) {
  const double n = v.norm();
  if (n == 0.0) throw DegenerateInputError("cannot normalize a zero-norm vector");
  return v / n;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

std::vector<float> to_float32(const Vector& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  return out;
}

Vector from_float32(std::span<const float> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i];
  return v;
}

}  // namespace isearle
