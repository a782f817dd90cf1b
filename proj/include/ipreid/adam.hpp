#pragma once

#include <cmath>
#include <vector>

#include "ipreid/common.hpp"

namespace ipreid {

// Adaptive moment estimation over a flat parameter vector.
class Adam {
 public:
  Adam(long n, Scalar beta1, Scalar beta2, Scalar eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(Span params, ConstSpan grads, Scalar lr) {
    check(params.size() == m_.size() && grads.size() == m_.size(),
          "Adam: size mismatch");
    ++t_;
    const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
  }

  long steps() const { return t_; }
  std::vector<Scalar>& moment1() { return m_; }
  std::vector<Scalar>& moment2() { return v_; }
  const std::vector<Scalar>& moment1() const { return m_; }
  const std::vector<Scalar>& moment2() const { return v_; }
  void restore(std::vector<Scalar> m, std::vector<Scalar> v, long t) {
    check(m.size() == m_.size() && v.size() == v_.size(), "Adam: restore size mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  Scalar beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Scalar> m_, v_;
};

}  // namespace ipreid
