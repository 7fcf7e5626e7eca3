#include "mtltxt/adam.hpp"

#include <cmath>

#include "mtltxt/error.hpp"

namespace mtltxt {

Adam::Adam(std::shared_ptr<ParamStore> store, AdamConfig config)
    : store_(std::move(store)), config_(config) {
  m_.resize(store_->size());
  v_.resize(store_->size());
  for (std::size_t i = 0; i < store_->size(); ++i) {
    const Tensor& p = store_->param(static_cast<ParamId>(i));
    if (p.trainable()) {
      m_[i].assign(p.numel(), 0.0);
      v_[i].assign(p.numel(), 0.0);
    }
  }
}

void Adam::step() {
  // Validate first so a poisoned batch aborts without touching parameters.
  for (std::size_t i = 0; i < store_->size(); ++i) {
    const Tensor& p = store_->param(static_cast<ParamId>(i));
    if (!p.trainable() || !p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        fail_numeric("adam: non-finite gradient in parameter '" +
                     store_->name(static_cast<ParamId>(i)) + "'");
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store_->size(); ++i) {
    Tensor& p = store_->param(static_cast<ParamId>(i));
    if (!p.trainable()) continue;
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double g = p.has_grad() ? p.grad()[j] : 0.0;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p.values()[j] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace mtltxt
