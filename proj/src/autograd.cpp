#include "bino/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "bino/kernels.hpp"

namespace bino {

template <class T>
Var<T> Tape<T>::input(BasicTensor<T> value, bool requires_grad) {
  if (!value.all_finite()) throw NumericalError("non-finite tape input");
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::record(std::string_view op, BasicTensor<T> value, std::vector<int> inputs,
                       Backward backward) {
  if (!value.all_finite()) throw NumericalError("non-finite output from " + std::string(op));
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (int id : inputs) n.requires_grad = n.requires_grad || node(id).requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <class T>
BasicTensor<T>& Tape<T>::grad_buffer(int id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> root) {
  if (&root.tape() != this) throw std::invalid_argument("backward root belongs to another tape");
  if (root.value().size() != 1) throw ShapeError("backward root must be a scalar");
  for (Node& n : nodes_) n.grad = BasicTensor<T>();
  grad_buffer(root.id())[0] = T(1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = node(id);
    if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

namespace ag {
namespace {

template <class T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template <class T>
void require_rank(const Var<T>& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
}

// Accumulate `src` into the gradient of node `id` if it wants one.
template <class T, class F>
void accumulate(Tape<T>& tape, int id, F&& fn) {
  if (!tape.node(id).requires_grad) return;
  fn(tape.grad_buffer(id));
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner extents differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  BasicTensor<T> out({m, n});
  kernels::gemm(m, n, k, kernels::MatrixRef<T>{a.value().ptr(), k}, kernels::MatrixRef<T>{b.value().ptr(), n},
                T(0), out.ptr(), n);
  return a.tape().record("matmul", std::move(out), {a.id(), b.id()}, [m, n, k](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    const int ia = node.inputs[0], ib = node.inputs[1];
    const T* g = node.grad.ptr();
    accumulate(t, ia, [&](BasicTensor<T>& ga) {
      // dA = dC * B^T
      kernels::gemm(m, k, n, kernels::MatrixRef<T>{g, n}, kernels::MatrixRef<T>{t.node(ib).value.ptr(), n, true},
                    T(1), ga.ptr(), k);
    });
    accumulate(t, ib, [&](BasicTensor<T>& gb) {
      // dB = A^T * dC
      kernels::gemm(k, n, m, kernels::MatrixRef<T>{t.node(ia).value.ptr(), k, true}, kernels::MatrixRef<T>{g, n},
                    T(1), gb.ptr(), n);
    });
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record("add", std::move(out), {a.id(), b.id()}, [](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    for (int id : node.inputs)
      accumulate(t, id, [&](BasicTensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
      });
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record("sub", std::move(out), {a.id(), b.id()}, [](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    });
    accumulate(t, node.inputs[1], [&](BasicTensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= node.grad[i];
    });
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record("mul", std::move(out), {a.id(), b.id()}, [](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    const int ia = node.inputs[0], ib = node.inputs[1];
    accumulate(t, ia, [&](BasicTensor<T>& g) {
      const auto& other = t.node(ib).value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * other[i];
    });
    accumulate(t, ib, [&](BasicTensor<T>& g) {
      const auto& other = t.node(ia).value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * other[i];
    });
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return a.tape().record("scale", std::move(out), {a.id()}, [s](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * s;
    });
  });
}

template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_same_tape(x, bias);
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (bias.shape()[0] != d) throw ShapeError("add_bias: bias length does not match channel extent");
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.value()[i * d + j] + bias.value()[j];
  return x.tape().record("add_bias", std::move(out), {x.id(), bias.id()}, [n, d](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    });
    accumulate(t, node.inputs[1], [&](BasicTensor<T>& g) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += node.grad[i * d + j];
        g[j] += static_cast<T>(s);
      }
    });
  });
}

template <class T>
Var<T> add_indexed(Var<T> x, Var<T> table, const std::vector<std::size_t>& index) {
  require_same_tape(x, table);
  require_rank(x, 2, "add_indexed");
  require_rank(table, 2, "add_indexed");
  const std::size_t n = x.shape()[0], d = x.shape()[1], rows = table.shape()[0];
  if (table.shape()[1] != d || index.size() != n) throw ShapeError("add_indexed: shape mismatch");
  for (std::size_t r : index)
    if (r >= rows) throw ShapeError("add_indexed: index out of range");
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.value()[i * d + j] + table.value()[index[i] * d + j];
  return x.tape().record("add_indexed", std::move(out), {x.id(), table.id()},
                         [index, n, d](Tape<T>& t, int self) {
                           const auto& node = t.node(self);
                           accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
                           });
                           accumulate(t, node.inputs[1], [&](BasicTensor<T>& g) {
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < d; ++j) g[index[i] * d + j] += node.grad[i * d + j];
                           });
                         });
}

template <class T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  require_rank(x, 2, "layernorm");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (gain.value().size() != d || bias.value().size() != d) throw ShapeError("layernorm: affine length mismatch");
  auto xhat = std::make_shared<std::vector<T>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  BasicTensor<T> out(x.shape());
  const T* xv = x.value().ptr();
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((xv[i * d + j] - mu) * is);
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  return x.tape().record("layernorm", std::move(out), {x.id(), gain.id(), bias.id()},
                         [xhat, inv_std, n, d](Tape<T>& t, int self) {
                           const auto& node = t.node(self);
                           const auto& g = node.grad;
                           const auto& gain_v = t.node(node.inputs[1]).value;
                           accumulate(t, node.inputs[0], [&](BasicTensor<T>& gx) {
                             for (std::size_t i = 0; i < n; ++i) {
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                 const double dh = static_cast<double>(g[i * d + j]) * gain_v[j];
                                 m1 += dh;
                                 m2 += dh * (*xhat)[i * d + j];
                               }
                               m1 /= static_cast<double>(d);
                               m2 /= static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                 const double dh = static_cast<double>(g[i * d + j]) * gain_v[j];
                                 gx[i * d + j] += static_cast<T>((*inv_std)[i] * (dh - m1 - (*xhat)[i * d + j] * m2));
                               }
                             }
                           });
                           accumulate(t, node.inputs[1], [&](BasicTensor<T>& gg) {
                             for (std::size_t j = 0; j < d; ++j) {
                               double s = 0.0;
                               for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(g[i * d + j]) * (*xhat)[i * d + j];
                               gg[j] += static_cast<T>(s);
                             }
                           });
                           accumulate(t, node.inputs[2], [&](BasicTensor<T>& gb) {
                             for (std::size_t j = 0; j < d; ++j) {
                               double s = 0.0;
                               for (std::size_t i = 0; i < n; ++i) s += g[i * d + j];
                               gb[j] += static_cast<T>(s);
                             }
                           });
                         });
}

namespace {
inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

template <class T>
Var<T> activation(Var<T> x, Activation kind) {
  if (kind == Activation::gelu) {
    BasicTensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(gelu_value(x.value()[i]));
    return x.tape().record("gelu", std::move(out), {x.id()}, [](Tape<T>& t, int self) {
      const auto& node = t.node(self);
      const auto& xv = t.node(node.inputs[0]).value;
      accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(node.grad[i] * gelu_grad(xv[i]));
      });
    });
  }
  require_rank(x, 2, "swiglu");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (c % 2 != 0) throw ShapeError("swiglu: channel extent must be even, got " + std::to_string(c));
  const std::size_t h = c / 2;
  BasicTensor<T> out({n, h});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      const double v = x.value()[i * c + j], gt = x.value()[i * c + h + j];
      out[i * h + j] = static_cast<T>(v * gt * sigmoid(gt));
    }
  return x.tape().record("swiglu", std::move(out), {x.id()}, [n, h, c](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    const auto& xv = t.node(node.inputs[0]).value;
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h; ++j) {
          const double v = xv[i * c + j], gt = xv[i * c + h + j];
          const double s = sigmoid(gt);
          const double dy = node.grad[i * h + j];
          g[i * c + j] += static_cast<T>(dy * gt * s);
          g[i * c + h + j] += static_cast<T>(dy * v * s * (1.0 + gt * (1.0 - s)));
        }
    });
  });
}

template <class T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  BasicTensor<T> out(s);
  const T* xv = x.value().ptr();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, static_cast<double>(xv[base + l * inner]));
      double z = 0.0;
      for (std::size_t l = 0; l < len; ++l) z += std::exp(xv[base + l * inner] - mx);
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] = static_cast<T>(std::exp(xv[base + l * inner] - mx) / z);
    }
  return x.tape().record("softmax", std::move(out), {x.id()}, [outer, inner, len](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    const auto& y = node.value;
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) dot += static_cast<double>(node.grad[base + l * inner]) * y[base + l * inner];
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            g[idx] += static_cast<T>(y[idx] * (node.grad[idx] - dot));
          }
        }
    });
  });
}

template <class T>
Var<T> log_softmax(Var<T> x) {
  const Shape& s = x.shape();
  const std::size_t len = s.back();
  const std::size_t rows = x.value().size() / len;
  BasicTensor<T> out(s);
  const T* xv = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, static_cast<double>(xv[r * len + l]));
    double z = 0.0;
    for (std::size_t l = 0; l < len; ++l) z += std::exp(xv[r * len + l] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t l = 0; l < len; ++l) out[r * len + l] = static_cast<T>(xv[r * len + l] - lse);
  }
  return x.tape().record("log_softmax", std::move(out), {x.id()}, [rows, len](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    const auto& y = node.value;
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t l = 0; l < len; ++l) gs += node.grad[r * len + l];
        for (std::size_t l = 0; l < len; ++l)
          g[r * len + l] += static_cast<T>(node.grad[r * len + l] - std::exp(static_cast<double>(y[r * len + l])) * gs);
      }
    });
  });
}

}  // namespace ag

namespace rope {
template <class T>
void rotate(T* rows, std::size_t tokens, std::size_t head_dim, const BasicTensor<T>& angles, bool inverse) {
  const std::size_t pairs = head_dim / 2;
  for (std::size_t n = 0; n < tokens; ++n) {
    T* row = rows + n * head_dim;
    for (std::size_t i = 0; i < pairs; ++i) {
      const double th = angles[n * pairs + i];
      if (th == 0.0) continue;
      const double c = std::cos(th), s = inverse ? -std::sin(th) : std::sin(th);
      const double a = row[2 * i], b = row[2 * i + 1];
      row[2 * i] = static_cast<T>(a * c - b * s);
      row[2 * i + 1] = static_cast<T>(a * s + b * c);
    }
  }
}
}  // namespace rope

namespace ag {

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const BasicTensor<T>& angles) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  require_rank(q, 3, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t heads = q.shape()[0], n = q.shape()[1], hd = q.shape()[2];
  if (hd % 2 != 0) throw ShapeError("attention: head_dim must be even, got " + std::to_string(hd));
  if (angles.rank() != 2 || angles.dim(0) != n || angles.dim(1) != hd / 2)
    throw ShapeError("attention: rope angles must be [tokens x head_dim/2], got " + shape_string(angles.shape()));

  struct Saved {
    std::vector<T> qr, kr, probs;
  };
  auto saved = std::make_shared<Saved>();
  saved->qr.assign(q.value().ptr(), q.value().ptr() + q.value().size());
  saved->kr.assign(k.value().ptr(), k.value().ptr() + k.value().size());
  saved->probs.assign(heads * n * n, T(0));
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  BasicTensor<T> out(q.shape());
  for (std::size_t h = 0; h < heads; ++h) {
    T* qh = saved->qr.data() + h * n * hd;
    T* kh = saved->kr.data() + h * n * hd;
    rope::rotate(qh, n, hd, angles, false);
    rope::rotate(kh, n, hd, angles, false);
    T* ph = saved->probs.data() + h * n * n;
    kernels::gemm(n, n, hd, kernels::MatrixRef<T>{qh, hd}, kernels::MatrixRef<T>{kh, hd, true}, T(0), ph, n);
    if constexpr (std::is_same_v<T, float>) {
      kernels::softmax_rows(ph, n, n, inv_sqrt);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        T* row = ph + i * n;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]) * inv_sqrt);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double e = std::exp(static_cast<double>(row[j]) * inv_sqrt - mx);
          row[j] = static_cast<T>(e);
          z += e;
        }
        const double iz = 1.0 / z;
        for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<T>(row[j] * iz);
      }
    }
    kernels::gemm(n, hd, n, kernels::MatrixRef<T>{ph, n}, kernels::MatrixRef<T>{v.value().ptr() + h * n * hd, hd},
                  T(0), out.ptr() + h * n * hd, hd);
  }
  return q.tape().record(
      "attention", std::move(out), {q.id(), k.id(), v.id()},
      [saved, angles, heads, n, hd, inv_sqrt](Tape<T>& t, int self) {
        const auto& node = t.node(self);
        const int iq = node.inputs[0], ik = node.inputs[1], iv = node.inputs[2];
        const auto& vv = t.node(iv).value;
        std::vector<T> dp(n * n), dq(n * hd), dk(n * hd);
        for (std::size_t h = 0; h < heads; ++h) {
          const T* go = node.grad.ptr() + h * n * hd;
          const T* ph = saved->probs.data() + h * n * n;
          accumulate(t, iv, [&](BasicTensor<T>& gv) {
            kernels::gemm(n, hd, n, kernels::MatrixRef<T>{ph, n, true}, kernels::MatrixRef<T>{go, hd}, T(1),
                          gv.ptr() + h * n * hd, hd);
          });
          if (!t.node(iq).requires_grad && !t.node(ik).requires_grad) continue;
          // dP = dO V^T, then the softmax Jacobian gives dS (scaled logits).
          kernels::gemm(n, n, hd, kernels::MatrixRef<T>{go, hd}, kernels::MatrixRef<T>{vv.ptr() + h * n * hd, hd, true},
                        T(0), dp.data(), n);
          for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(dp[i * n + j]) * ph[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
              dp[i * n + j] = static_cast<T>(ph[i * n + j] * (dp[i * n + j] - dot) * inv_sqrt);
          }
          const T* qh = saved->qr.data() + h * n * hd;
          const T* kh = saved->kr.data() + h * n * hd;
          accumulate(t, iq, [&](BasicTensor<T>& gq) {
            kernels::gemm(n, hd, n, kernels::MatrixRef<T>{dp.data(), n}, kernels::MatrixRef<T>{kh, hd}, T(0),
                          dq.data(), hd);
            rope::rotate(dq.data(), n, hd, angles, true);
            T* dst = gq.ptr() + h * n * hd;
            for (std::size_t i = 0; i < n * hd; ++i) dst[i] += dq[i];
          });
          accumulate(t, ik, [&](BasicTensor<T>& gk) {
            kernels::gemm(n, hd, n, kernels::MatrixRef<T>{dp.data(), n, true}, kernels::MatrixRef<T>{qh, hd}, T(0),
                          dk.data(), hd);
            rope::rotate(dk.data(), n, hd, angles, true);
            T* dst = gk.ptr() + h * n * hd;
            for (std::size_t i = 0; i < n * hd; ++i) dst[i] += dk[i];
          });
        }
      });
}

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (begin >= end || end > c) throw ShapeError("slice_cols: invalid column range");
  const std::size_t w = end - begin;
  BasicTensor<T> out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(x.value().ptr() + i * c + begin, w, out.ptr() + i * w);
  return x.tape().record("slice_cols", std::move(out), {x.id()}, [n, c, w, begin](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += node.grad[i * w + j];
    });
  });
}

template <class T>
Var<T> split_heads(Var<T> x, std::size_t heads) {
  require_rank(x, 2, "split_heads");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (heads == 0 || c % heads != 0) throw ShapeError("split_heads: channels not divisible by heads");
  const std::size_t hd = c / heads;
  BasicTensor<T> out({heads, n, hd});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.value().ptr() + i * c + h * hd, hd, out.ptr() + (h * n + i) * hd);
  return x.tape().record("split_heads", std::move(out), {x.id()}, [heads, n, c, hd](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < hd; ++j) g[i * c + h * hd + j] += node.grad[(h * n + i) * hd + j];
    });
  });
}

template <class T>
Var<T> merge_heads(Var<T> x) {
  require_rank(x, 3, "merge_heads");
  const std::size_t heads = x.shape()[0], n = x.shape()[1], hd = x.shape()[2];
  const std::size_t c = heads * hd;
  BasicTensor<T> out({n, c});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.value().ptr() + (h * n + i) * hd, hd, out.ptr() + i * c + h * hd);
  return x.tape().record("merge_heads", std::move(out), {x.id()}, [heads, n, c, hd](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < hd; ++j) g[(h * n + i) * hd + j] += node.grad[i * c + h * hd + j];
    });
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  double s = 0.0;
  for (T v : x.value().data()) s += v;
  BasicTensor<T> out({1}, static_cast<T>(s));
  return x.tape().record("sum", std::move(out), {x.id()}, [](Tape<T>& t, int self) {
    const auto& node = t.node(self);
    const T g0 = node.grad[0];
    accumulate(t, node.inputs[0], [&](BasicTensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0;
    });
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.value().size())));
}

#define BINO_INSTANTIATE_OPS(T)                                                             \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                \
  template Var<T> add<T>(Var<T>, Var<T>);                                                   \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                   \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                   \
  template Var<T> scale<T>(Var<T>, T);                                                      \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                              \
  template Var<T> add_indexed<T>(Var<T>, Var<T>, const std::vector<std::size_t>&);          \
  template Var<T> layernorm<T>(Var<T>, Var<T>, Var<T>, T);                                  \
  template Var<T> activation<T>(Var<T>, Activation);                                        \
  template Var<T> softmax<T>(Var<T>, std::size_t);                                          \
  template Var<T> log_softmax<T>(Var<T>);                                                   \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, const BasicTensor<T>&);              \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);                          \
  template Var<T> split_heads<T>(Var<T>, std::size_t);                                      \
  template Var<T> merge_heads<T>(Var<T>);                                                   \
  template Var<T> sum<T>(Var<T>);                                                           \
  template Var<T> mean<T>(Var<T>);

BINO_INSTANTIATE_OPS(float)
BINO_INSTANTIATE_OPS(double)
#undef BINO_INSTANTIATE_OPS

}  // namespace ag

template class Tape<float>;
template class Tape<double>;
template void rope::rotate<float>(float*, std::size_t, std::size_t, const BasicTensor<float>&, bool);
template void rope::rotate<double>(double*, std::size_t, std::size_t, const BasicTensor<double>&, bool);

}  // namespace bino
