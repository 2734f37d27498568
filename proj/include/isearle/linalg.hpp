#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace isearle {

// All math runs in double; on-disk artifacts are float32.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Throws DegenerateInputError when either vector has zero norm.
double cosine(const Vector& a, const Vector& b);

// d cos(a, b) / d b.
Vector cosine_grad_b(const Vector& a, const Vector& b);

// Throws DegenerateInputError on zero norm.
Vector normalized(const Vector& v);

bool all_finite(const Vector& v);

std::vector<float> to_float32(const Vector& v);
Vector from_float32(std::span<const float> values);

}  // namespace isearle
