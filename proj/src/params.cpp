#include "bino/params.hpp"

#include <algorithm>

namespace bino {

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParamSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].first == name) return i;
  throw std::out_of_range("no parameter named " + std::string(name));
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

std::vector<Tensor*> ParamSet::pointers() {
  std::vector<Tensor*> out;
  out.reserve(entries_.size());
  for (auto& e : entries_) out.push_back(&e.second);
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (name(i) != other.name(i) || tensor(i).shape() != other.tensor(i).shape()) return false;
  return true;
}

ParamVars::ParamVars(Tape<float>& tape, const ParamSet& params, bool requires_grad) : params_(&params) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) vars_.push_back(tape.input(params.tensor(i), requires_grad));
}

}  // namespace bino
