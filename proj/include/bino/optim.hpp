#pragma once

#include <cstdint>
#include <vector>

#include "bino/tensor.hpp"

namespace bino {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// First/second moment buffers, one pair per parameter tensor.
struct AdamWMoments {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  static AdamWMoments zeros_like(const std::vector<Tensor*>& params);
};

// Decoupled weight decay followed by the bias-corrected adaptive update. A
// non-finite gradient throws NumericalError before any parameter is touched.
void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamWMoments& moments,
                const AdamWConfig& cfg);

}  // namespace bino
