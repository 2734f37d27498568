#pragma once

#include <cstdint>

#include "isearle/linalg.hpp"

namespace isearle {

// Adam with decoupled weight decay over one flat parameter vector.
class AdamW {
 public:
  AdamW(Eigen::Index size, double learning_rate, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step(Vector& params, const Vector& grad);
  std::int64_t steps() const { return t_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  Vector m_, v_;
  std::int64_t t_ = 0;
};

// Exponential moving average with the usual warm-up: the effective decay
// after t updates is min(decay, (1 + t) / (10 + t)).
class Ema {
 public:
  Ema(const Vector& initial, double decay) : shadow_(initial), decay_(decay) {}

  void update(const Vector& params);
  const Vector& value() const { return shadow_; }

 private:
  Vector shadow_;
  double decay_;
  std::int64_t updates_ = 0;
};

}  // namespace isearle
