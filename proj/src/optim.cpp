#include "bino/optim.hpp"

#include <cmath>
#include <string>

namespace bino {

AdamWMoments AdamWMoments::zeros_like(const std::vector<Tensor*>& params) {
  AdamWMoments out;
  for (const Tensor* p : params) {
    out.m.emplace_back(p->shape());
    out.v.emplace_back(p->shape());
  }
  return out;
}

void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamWMoments& moments,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size() || params.size() != moments.m.size() || params.size() != moments.v.size())
    throw ShapeError("adamw_step: parameter, gradient and moment lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->shape() != params[i]->shape() || moments.m[i].shape() != params[i]->shape() ||
        moments.v[i].shape() != params[i]->shape())
      throw ShapeError("adamw_step: shape mismatch at parameter " + std::to_string(i));
    if (!grads[i]->all_finite())
      throw NumericalError("adamw_step: non-finite gradient at parameter " + std::to_string(i));
  }
  moments.step += 1;
  const double t = static_cast<double>(moments.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = moments.m[i];
    Tensor& v = moments.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      p[j] = static_cast<float>(static_cast<double>(p[j]) * decay - cfg.lr * update);
    }
  }
}

}  // namespace bino
