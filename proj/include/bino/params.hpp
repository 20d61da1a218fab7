#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bino/autograd.hpp"
#include "bino/tensor.hpp"

namespace bino {

// Ordered, named parameter tensors. Order is fixed by construction and is the
// order used by the optimizer, EMA updates, and checkpoints.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  Tensor& at(std::string_view name) { return entries_[index(name)].second; }
  const Tensor& at(std::string_view name) const { return entries_[index(name)].second; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor& tensor(std::size_t i) { return entries_[i].second; }
  const Tensor& tensor(std::size_t i) const { return entries_[i].second; }
  std::vector<Tensor*> pointers();

  bool same_layout(const ParamSet& other) const;
  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Parameters pushed onto a tape as leaves, addressable by name.
class ParamVars {
 public:
  ParamVars(Tape<float>& tape, const ParamSet& params, bool requires_grad);
  Var<float> operator[](std::string_view name) const { return vars_[params_->index(name)]; }
  Var<float> at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

 private:
  const ParamSet* params_;
  std::vector<Var<float>> vars_;
};

}  // namespace bino
