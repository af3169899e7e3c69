#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mground/errors.hpp"

namespace mground {

struct AdamOptions {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over one flat parameter block, bias-corrected.
class Adam {
 public:
  Adam(std::size_t n, AdamOptions options) : opt_(options), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      fail(ErrorCode::kShape, "Adam::step: parameter/gradient size mismatch");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grad[i];
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      params[i] -= opt_.lr * m_hat / (std::sqrt(v_hat) + opt_.eps);
    }
  }

  int steps_taken() const noexcept { return t_; }

 private:
  AdamOptions opt_;
  std::vector<double> m_;
  std::vector<double> v_;
  int t_ = 0;
};

}  // namespace mground
