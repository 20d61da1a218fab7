#pragma once

// Central-difference gradient checking on the double-precision tape.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "bino/autograd.hpp"

namespace gradcheck {

using bino::Shape;
using DTensor = bino::BasicTensor<double>;
using DVar = bino::Var<double>;
using DTape = bino::Tape<double>;

inline constexpr double kStep = 1e-4;
inline constexpr double kMaxRelError = 1e-3;

inline DTensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  DTensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// f maps leaf variables to an output of any shape; the check contracts the
// output with fixed random weights so every output element contributes.
using Fn = std::function<DVar(DTape&, const std::vector<DVar>&)>;

struct Result {
  double rel_error = 0.0;
  std::size_t checked = 0;
};

inline Result check(const Fn& f, std::vector<DTensor> inputs, std::mt19937_64& rng) {
  DTensor weights;
  auto scalar = [&](const std::vector<DTensor>& xs, bool keep, std::vector<DTensor>* grads) {
    DTape tape;
    std::vector<DVar> vars;
    for (const auto& x : xs) vars.push_back(tape.input(x, true));
    DVar out = f(tape, vars);
    if (weights.empty()) weights = random_tensor(out.shape(), rng, 0.5, 1.5);
    DVar w = tape.input(weights, false);
    DVar loss = bino::ag::sum(bino::ag::mul(out, w));
    const double v = loss.value()[0];
    if (keep) {
      tape.backward(loss);
      for (const auto& var : vars)
        grads->push_back(var.grad().empty() ? DTensor(var.shape()) : var.grad());
    }
    return v;
  };
  std::vector<DTensor> analytic;
  scalar(inputs, true, &analytic);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  Result res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + kStep;
      const double up = scalar(inputs, false, nullptr);
      inputs[i][j] = orig - kStep;
      const double dn = scalar(inputs, false, nullptr);
      inputs[i][j] = orig;
      const double num = (up - dn) / (2 * kStep);
      const double an = analytic[i][j];
      diff2 += (an - num) * (an - num);
      a2 += an * an;
      n2 += num * num;
      ++res.checked;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  res.rel_error = std::sqrt(diff2) / denom;
  return res;
}

}  // namespace gradcheck
