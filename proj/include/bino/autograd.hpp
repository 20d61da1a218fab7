#pragma once

// Reverse-mode differentiation over a recorded tape. Nodes are appended in
// execution order, so inputs always precede their consumers and backward is a
// single reverse sweep.

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "bino/tensor.hpp"

namespace bino {

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  int id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient accumulated by the last backward sweep; empty if none reached it.
  const BasicTensor<T>& grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  struct Node {
    std::string op;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    std::vector<int> inputs;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> input(BasicTensor<T> value) {
    const bool rg = value.requires_grad();
    return input(std::move(value), rg);
  }
  Var<T> input(BasicTensor<T> value, bool requires_grad);

  // Appends the result of a primitive. The backward closure is dropped when no
  // input requires a gradient. Throws NumericalError on non-finite output.
  Var<T> record(std::string_view op, BasicTensor<T> value, std::vector<int> inputs, Backward backward);

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. Root must hold a
  // single element.
  void backward(Var<T> root);

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Gradient buffer for node `id`, zero-allocated on first use.
  BasicTensor<T>& grad_buffer(int id);
  bool has_grad(int id) const { return !node(id).grad.empty(); }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  return tape_->node(id_).value;
}
template <class T>
bool Var<T>::requires_grad() const {
  return tape_->node(id_).requires_grad;
}
template <class T>
const BasicTensor<T>& Var<T>::grad() const {
  return tape_->node(id_).grad;
}

namespace ag {

enum class Activation { gelu, swiglu };

// Every op below is a tape primitive with a hand-written backward.
template <class T> Var<T> matmul(Var<T> a, Var<T> b);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T s);
// x[N x d] + bias[d] (leading-axis broadcast only).
template <class T> Var<T> add_bias(Var<T> x, Var<T> bias);
// x[n] + table[index[n]] for x[N x d], table[R x d].
template <class T> Var<T> add_indexed(Var<T> x, Var<T> table, const std::vector<std::size_t>& index);
template <class T> Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
template <class T> Var<T> activation(Var<T> x, Activation kind);
template <class T> Var<T> softmax(Var<T> x, std::size_t axis);
template <class T> Var<T> log_softmax(Var<T> x);
// Rotary attention. q, k, v are [heads x tokens x head_dim]; angles is
// [tokens x head_dim/2] and rotates channel pairs (2i, 2i+1) of q and k.
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const BasicTensor<T>& angles);
template <class T> Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end);
template <class T> Var<T> split_heads(Var<T> x, std::size_t heads);
template <class T> Var<T> merge_heads(Var<T> x);
template <class T> Var<T> sum(Var<T> x);
template <class T> Var<T> mean(Var<T> x);

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_bias(matmul(x, weight), bias);
}

}  // namespace ag

// Forward-only helpers shared with non-differentiable code paths.
namespace rope {
// Rotates channel pairs of a [tokens x head_dim] row block in place.
template <class T>
void rotate(T* rows, std::size_t tokens, std::size_t head_dim, const BasicTensor<T>& angles, bool inverse);
}  // namespace rope

}  // namespace bino
