#pragma once

#include <cstddef>
#include <vector>

#include "featmatch/autodiff.hpp"
#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"

namespace featmatch {

// SGD with Nesterov momentum and L2 weight decay folded into the gradient:
//   g <- g + wd * theta      (parameters with decay enabled)
//   v <- mu * v + g
//   theta <- theta - lr * (g + mu * v)
inline void sgd_nesterov_step(Parameter& p, Matrix& velocity, double lr, double momentum, double weight_decay) {
  if (!p.grad.same_shape(p.value) || !velocity.same_shape(p.value)) {
    throw ConfigError("sgd_nesterov_step: shape mismatch for '" + p.name + "'");
  }
  auto& theta = p.value.data();
  const auto& grad = p.grad.data();
  auto& v = velocity.data();
  const double wd = p.decay ? weight_decay : 0.0;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = grad[k] + wd * theta[k];
    v[k] = momentum * v[k] + g;
    theta[k] -= lr * (g + momentum * v[k]);
  }
}

class NesterovSgd {
 public:
  NesterovSgd() = default;
  explicit NesterovSgd(const std::vector<Parameter*>& params) {
    for (const Parameter* p : params) velocity_.emplace_back(p->value.rows(), p->value.cols());
  }

  void step(const std::vector<Parameter*>& params, double lr, double momentum, double weight_decay) {
    if (params.size() != velocity_.size()) throw ConfigError("NesterovSgd: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i) sgd_nesterov_step(*params[i], velocity_[i], lr, momentum, weight_decay);
  }

  std::vector<Matrix>& velocity() { return velocity_; }
  const std::vector<Matrix>& velocity() const { return velocity_; }

 private:
  std::vector<Matrix> velocity_;
};

}  // namespace featmatch
