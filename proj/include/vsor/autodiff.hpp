#pragma once

// Define-by-run reverse-mode differentiation over fp64 tensors.
//
// A Tape owns every value produced while a graph is built. Vars are cheap
// handles (tape pointer + node index). Ops append nodes in execution order and
// backward() replays them in exact reverse order. Only the handful of ops that
// the ranking modules need are provided; there is no broadcasting beyond the
// bias add inside conv1x1/linear.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vsor/error.hpp"
#include "vsor/tensor.hpp"

namespace vsor {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }

  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the node's own output value and its accumulated gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Leaf that participates in differentiation.
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient from the last backward() call; zeros when the node was unreachable.
  Tensor grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return Tensor(n.value.shape(), n.grad);
  }

  /// Reverse sweep from a single-element output. Gradients are reset first, so
  /// each call populates every reachable grad exactly once.
  void backward(Var output) {
    const Node& out = node(output);
    if (out.value.size() != 1) {
      throw DimensionError("backward() needs a scalar output, got " + shape_string(out.value.shape()));
    }
    for (Node& n : nodes_) {
      if (n.requires_grad) {
        n.grad.assign(n.value.size(), 0.0);
      } else {
        n.grad.clear();
      }
    }
    if (!out.requires_grad) return;
    nodes_[output.id()].grad[0] = 1.0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, n.value, n.grad);
    }
    if (fault_factor_ != 1.0) {
      for (Node& n : nodes_) {
        if (n.requires_grad && !n.backward) {
          for (double& g : n.grad) g *= fault_factor_;
        }
      }
    }
  }

  /// Test hook: scales every leaf gradient after backward(), emulating a
  /// broken backward pass so the gradient checker's negative control fires.
  void inject_gradient_fault(double factor) noexcept { fault_factor_ = factor; }

  /// Appends an op result. The node requires grad when any input does; the
  /// backward closure is dropped otherwise.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owner(in);
      needs = needs || node(in).requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  /// Gradient accumulator of v, or nullptr when v does not require grad.
  double* grad_data(Var v) {
    Node& n = nodes_[v.id()];
    return n.requires_grad ? n.grad.data() : nullptr;
  }

  void check_owner(Var v) const {
    if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
      throw Error("variable does not belong to this tape");
    }
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  const Node& node(Var v) const {
    check_owner(v);
    return nodes_[v.id()];
  }

  std::deque<Node> nodes_;  // deque: references to values survive push_back
  double fault_factor_ = 1.0;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

// c[M×P] += a[M×K] · b[K×P]
inline void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a[i * k + kk];
      const double* brow = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

// da[M×K] += dc[M×P] · b[K×P]ᵀ
inline void gemm_bt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
                    std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * p;
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) acc += drow[j] * brow[j];
      da[i * k + kk] += acc;
    }
  }
}

// db[K×P] += a[M×K]ᵀ · dc[M×P]
inline void gemm_at(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
                    std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a[i * k + kk];
      double* brow = db + kk * p;
      for (std::size_t j = 0; j < p; ++j) brow[j] += aik * drow[j];
    }
  }
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
  }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void require_same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw Error("operands live on different tapes");
  }
}

}  // namespace detail

/// a[M×K] · b[K×P] → [M×P].
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({m, p});
  detail::gemm(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, p);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, p](Tape& t, const Tensor&, std::span<const double> g) {
    if (double* da = t.grad_data(a)) detail::gemm_bt(g.data(), b.value().data().data(), da, m, k, p);
    if (double* db = t.grad_data(b)) detail::gemm_at(a.value().data().data(), g.data(), db, m, k, p);
  });
}

/// Per-batch product a[B×M×K] · b[B×K×P] → [B×M×P].
inline Var batched_matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_rank(a, 3, "batched_matmul");
  detail::require_rank(b, 3, "batched_matmul");
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], p = b.shape()[2];
  if (b.shape()[0] != batch || b.shape()[1] != k) {
    throw DimensionError("batched_matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({batch, m, p});
  const double* ad = a.value().data().data();
  const double* bd = b.value().data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    detail::gemm(ad + n * m * k, bd + n * k * p, out.data().data() + n * m * p, m, k, p);
  }
  return a.tape().record(std::move(out), {a, b},
                         [a, b, batch, m, k, p](Tape& t, const Tensor&, std::span<const double> g) {
                           const double* av = a.value().data().data();
                           const double* bv = b.value().data().data();
                           double* da = t.grad_data(a);
                           double* db = t.grad_data(b);
                           for (std::size_t n = 0; n < batch; ++n) {
                             const double* gn = g.data() + n * m * p;
                             if (da) detail::gemm_bt(gn, bv + n * k * p, da + n * m * k, m, k, p);
                             if (db) detail::gemm_at(av + n * m * k, gn, db + n * k * p, m, k, p);
                           }
                         });
}

/// Pointwise channel map on x[N×C×H×W]: out[n,:,h,w] = weight·x[n,:,h,w] + bias.
inline Var conv1x1(Var x, Var weight, Var bias) {
  detail::require_same_tape(x, weight);
  detail::require_same_tape(x, bias);
  detail::require_rank(x, 4, "conv1x1");
  detail::require_rank(weight, 2, "conv1x1 weight");
  detail::require_rank(bias, 1, "conv1x1 bias");
  const std::size_t n = x.shape()[0], c_in = x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  const std::size_t c_out = weight.shape()[0];
  if (weight.shape()[1] != c_in || bias.shape()[0] != c_out) {
    throw DimensionError("conv1x1: channel mismatch, input " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  Tensor out({n, c_out, x.shape()[2], x.shape()[3]});
  const double* xd = x.value().data().data();
  const double* wd = weight.value().data().data();
  const double* bd = bias.value().data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* on = od + i * c_out * hw;
    for (std::size_t o = 0; o < c_out; ++o) std::fill(on + o * hw, on + (o + 1) * hw, bd[o]);
    detail::gemm(wd, xd + i * c_in * hw, on, c_out, c_in, hw);
  }
  return x.tape().record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, n, c_in, c_out, hw](Tape& t, const Tensor&, std::span<const double> g) {
        const double* xv = x.value().data().data();
        const double* wv = weight.value().data().data();
        double* dx = t.grad_data(x);
        double* dw = t.grad_data(weight);
        double* db = t.grad_data(bias);
        for (std::size_t i = 0; i < n; ++i) {
          const double* gn = g.data() + i * c_out * hw;
          if (dx) detail::gemm_at(wv, gn, dx + i * c_in * hw, c_out, c_in, hw);
          if (dw) detail::gemm_bt(gn, xv + i * c_in * hw, dw, c_out, c_in, hw);
          if (db) {
            for (std::size_t o = 0; o < c_out; ++o) {
              double acc = 0.0;
              for (std::size_t p = 0; p < hw; ++p) acc += gn[o * hw + p];
              db[o] += acc;
            }
          }
        }
      });
}

/// Softmax over the last axis of x / √scale_dim, max-subtracted.
inline Var scaled_softmax(Var x, std::size_t scale_dim) {
  if (scale_dim == 0) throw DimensionError("scaled_softmax: scale_dim must be positive");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(scale_dim));
  Tensor out(x.shape());
  const double* xd = x.value().data().data();
  double* od = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * len;
    double* yr = od + r * len;
    const double mx = *std::max_element(xr, xr + len);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      yr[j] = std::exp((xr[j] - mx) * inv_scale);
      total += yr[j];
    }
    for (std::size_t j = 0; j < len; ++j) yr[j] /= total;
  }
  return x.tape().record(std::move(out), {x},
                         [x, rows, len, inv_scale](Tape& t, const Tensor& y, std::span<const double> g) {
                           double* dx = t.grad_data(x);
                           if (!dx) return;
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* yr = y.data().data() + r * len;
                             const double* gr = g.data() + r * len;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < len; ++j) dot += gr[j] * yr[j];
                             for (std::size_t j = 0; j < len; ++j) {
                               dx[r * len + j] += inv_scale * yr[j] * (gr[j] - dot);
                             }
                           }
                         });
}


/// Arithmetic mean along `axis`; the axis is removed (a rank-1 input yields shape {1}).
inline Var mean_axis(Var x, std::size_t axis) {
  const Shape& in = x.shape();
  if (axis >= in.size()) {
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(in));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = in[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (i != axis) out_shape.push_back(in[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const double* xd = x.value().data().data();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const double* src = xd + (o * len + a) * inner;
      double* dst = out.data().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (double& v : out.data()) v *= inv;
  return x.tape().record(std::move(out), {x},
                         [x, outer, len, inner, inv](Tape& t, const Tensor&, std::span<const double> g) {
                           double* dx = t.grad_data(x);
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t a = 0; a < len; ++a) {
                               double* dst = dx + (o * len + a) * inner;
                               const double* src = g.data() + o * inner;
                               for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
                             }
                           }
                         });
}

/// Affine map over the last axis: x[...×D] → x·weightᵀ + bias, weight [D'×D], bias [D'].
inline Var linear(Var x, Var weight, Var bias) {
  detail::require_same_tape(x, weight);
  detail::require_same_tape(x, bias);
  detail::require_rank(weight, 2, "linear weight");
  detail::require_rank(bias, 1, "linear bias");
  const std::size_t d_in = x.shape().back();
  const std::size_t d_out = weight.shape()[0];
  if (weight.shape()[1] != d_in || bias.shape()[0] != d_out) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t rows = x.size() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor out(out_shape);
  const double* xd = x.value().data().data();
  const double* wd = weight.value().data().data();
  const double* bd = bias.value().data().data();
  double* od = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < d_out; ++o) {
      double acc = bd[o];
      for (std::size_t d = 0; d < d_in; ++d) acc += wd[o * d_in + d] * xd[r * d_in + d];
      od[r * d_out + o] = acc;
    }
  }
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias, rows, d_in, d_out](Tape& t, const Tensor&,
                                                              std::span<const double> g) {
                           if (double* dx = t.grad_data(x)) {
                             detail::gemm(g.data(), weight.value().data().data(), dx, rows, d_out, d_in);
                           }
                           if (double* dw = t.grad_data(weight)) {
                             detail::gemm_at(g.data(), x.value().data().data(), dw, rows, d_out, d_in);
                           }
                           if (double* db = t.grad_data(bias)) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t o = 0; o < d_out; ++o) db[o] += g[r * d_out + o];
                             }
                           }
                         });
}

/// Data-preserving reinterpretation of the row-major buffer.
inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, std::span<const double> g) {
    double* dx = t.grad_data(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

/// Swaps the two trailing axes: [...×M×P] → [...×P×M].
inline Var transpose_last2(Var x) {
  const Shape& in = x.shape();
  if (in.size() < 2) throw DimensionError("transpose_last2: rank < 2 for " + shape_string(in));
  const std::size_t m = in[in.size() - 2], p = in.back();
  const std::size_t batch = x.size() / (m * p);
  Shape out_shape = in;
  std::swap(out_shape[in.size() - 2], out_shape.back());
  Tensor out(out_shape);
  const double* xd = x.value().data().data();
  double* od = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < p; ++j) od[b * m * p + j * m + i] = xd[b * m * p + i * p + j];
    }
  }
  return x.tape().record(std::move(out), {x},
                         [x, batch, m, p](Tape& t, const Tensor&, std::span<const double> g) {
                           double* dx = t.grad_data(x);
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < p; ++j) {
                                 dx[b * m * p + i * p + j] += g[b * m * p + j * m + i];
                               }
                             }
                           }
                         });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, std::span<const double> g) {
    if (double* da = t.grad_data(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (double* db = t.grad_data(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, std::span<const double> g) {
    if (double* da = t.grad_data(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (double* db = t.grad_data(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor&, std::span<const double> g) {
    if (double* da = t.grad_data(a)) {
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (double* db = t.grad_data(b)) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

/// scale·x + shift, elementwise.
inline Var affine(Var x, double scale, double shift) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + shift;
  return x.tape().record(std::move(out), {x}, [x, scale](Tape& t, const Tensor&, std::span<const double> g) {
    double* dx = t.grad_data(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += scale * g[i];
  });
}

inline Var relu(Var x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, xv[i]);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor&, std::span<const double> g) {
    double* dx = t.grad_data(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += g[i];
    }
  });
}

/// Sum of all elements → shape {1}.
inline Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor&, std::span<const double> g) {
    double* dx = t.grad_data(x);
    const std::size_t n = t.value(x).size();
    for (std::size_t i = 0; i < n; ++i) dx[i] += g[0];
  });
}

/// Slice `index` of the leading axis; the axis is removed (rank-1 input yields {1}).
inline Var select(Var x, std::size_t index) {
  const Shape& in = x.shape();
  if (index >= in[0]) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " +
                         shape_string(in));
  }
  Shape out_shape(in.begin() + 1, in.end());
  if (out_shape.empty()) out_shape.push_back(1);
  const std::size_t block = x.size() / in[0];
  const auto begin = x.value().vector().begin() + static_cast<std::ptrdiff_t>(index * block);
  Tensor out(out_shape, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(block)));
  return x.tape().record(std::move(out), {x},
                         [x, index, block](Tape& t, const Tensor&, std::span<const double> g) {
                           double* dx = t.grad_data(x) + index * block;
                           for (std::size_t i = 0; i < block; ++i) dx[i] += g[i];
                         });
}

/// Joins tensors along `axis`; all other extents must agree.
inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_string(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;  // per part: extent(axis) * inner
  std::size_t total_axis = 0;
  for (const Var& p : parts) {
    detail::require_same_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_string(first) + " and " +
                           shape_string(s));
    }
    widths.push_back(s[axis] * inner);
    total_axis += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  const std::size_t row = total_axis * inner;
  Tensor out(out_shape);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k].value().data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * widths[k], src + (o + 1) * widths[k], out.data().data() + o * row + col);
    }
    col += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), std::span<const Var>(inputs),
      [inputs, widths, outer, row](Tape& t, const Tensor&, std::span<const double> g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (double* dx = t.grad_data(inputs[k])) {
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t i = 0; i < widths[k]; ++i) dx[o * widths[k] + i] += g[o * row + offset + i];
            }
          }
          offset += widths[k];
        }
      });
}

/// Stacks equally shaped tensors along a new leading axis.
inline Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  std::vector<Var> expanded;
  expanded.reserve(parts.size());
  for (const Var& p : parts) {
    detail::require_same_shape(parts[0], p, "stack");
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    expanded.push_back(reshape(p, std::move(s)));
  }
  return concat(expanded, 0);
}

}  // namespace vsor
