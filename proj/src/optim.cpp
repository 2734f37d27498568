#include "isearle/optim.hpp"

#include <algorithm>
#include <cmath>

#include "isearle/errors.hpp"

namespace isearle {

AdamW::AdamW(Eigen::Index size, double learning_rate, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(learning_rate),
      wd_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(Vector::Zero(size)),
      v_(Vector::Zero(size)) {}

void AdamW::step(Vector& params, const Vector& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw InputError("AdamW: size mismatch");
  ++t_;
  params *= 1.0 - lr_ * wd_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double step = lr_ / bc1;
  params.array() -= step * m_.array() / ((v_.array() / bc2).sqrt() + eps_);
}

void Ema::update(const Vector& params) {
  ++updates_;
  const double t = static_cast<double>(updates_);
  const double decay = std::min(decay_, (1.0 + t) / (10.0 + t));
  shadow_ = decay * shadow_ + (1.0 - decay) * params;
}

}  // namespace isearle
