// Reverse-mode autodiff over an explicit tape. Ops append their forward
// result as a new node plus a backward closure; backward() replays the
// closures in exact reverse execution order, accumulating gradients
// additively so a value consumed by several branches receives the sum.
//
// Parameters live outside the tape (leaf nodes borrow them); their gradients
// land in Tensor::grad and persist across tapes until an optimizer clears
// them. Tensors are immutable once recorded; one tape has a single writer.

#pragma once

#include "dconv/ops.hpp"
#include "dconv/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <utility>

namespace dconv {

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

template <class S>
class TapeT {
 public:
  using Tensor = TensorT<S>;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // --- node creation ------------------------------------------------------

  // Borrow an external parameter. Gradients accumulate into param->grad.
  Var leaf(Tensor* param) {
    Node n;
    n.external = param;
    n.needs_grad = param->requires_grad;
    return push(std::move(n));
  }

  // Tape-owned value with no gradient (inputs, masks, frozen constants).
  Var constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return val(v.idx); }

  // Gradient of a tape-internal node after backward() (leafs report into the
  // borrowed tensor instead).
  const std::vector<S>& grad(Var v) const { return nodes_[v.idx].grad; }

  // --- elementwise / arithmetic -------------------------------------------

  Var add(Var a, Var b) {
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (ta.shape != tb.shape)
      throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                                  shape_str(tb.shape));
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    Var o = emit(std::move(out), {a, b});
    record(o, [this, a, b, o] {
      const auto& g = nodes_[o.idx].grad;
      if (needs(a)) axpy(grad_buf(a.idx), g, S(1));
      if (needs(b)) axpy(grad_buf(b.idx), g, S(1));
    });
    return o;
  }

  Var sub(Var a, Var b) { return add(a, scale(b, S(-1))); }

  Var mul(Var a, Var b) {
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (ta.shape != tb.shape)
      throw std::invalid_argument("mul: shape mismatch " + shape_str(ta.shape) + " vs " +
                                  shape_str(tb.shape));
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    Var o = emit(std::move(out), {a, b});
    record(o, [this, a, b, o] {
      const auto& g = nodes_[o.idx].grad;
      if (needs(a)) {
        auto& ga = grad_buf(a.idx);
        const auto& tb2 = val(b.idx).data;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb2[i];
      }
      if (needs(b)) {
        auto& gb = grad_buf(b.idx);
        const auto& ta2 = val(a.idx).data;
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ta2[i];
      }
    });
    return o;
  }

  Var scale(Var a, S c) {
    const Tensor& ta = val(a.idx);
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * ta.data[i];
    Var o = emit(std::move(out), {a});
    record(o, [this, a, o, c] {
      if (needs(a)) axpy(grad_buf(a.idx), nodes_[o.idx].grad, c);
    });
    return o;
  }

  Var gelu(Var a) {
    Tensor out = gelu_forward(val(a.idx));
    Var o = emit(std::move(out), {a});
    record(o, [this, a, o] {
      if (!needs(a)) return;
      auto& ga = grad_buf(a.idx);
      const auto& x = val(a.idx).data;
      const auto& g = nodes_[o.idx].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad_scalar(x[i]);
    });
    return o;
  }

  Var sigmoid(Var a) {
    const Tensor& ta = val(a.idx);
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
      const S x = ta.data[i];
      out.data[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                              : std::exp(x) / (S(1) + std::exp(x));
    }
    Var o = emit(std::move(out), {a});
    record(o, [this, a, o] {
      if (!needs(a)) return;
      auto& ga = grad_buf(a.idx);
      const auto& y = nodes_[o.idx].owned.data;
      const auto& g = nodes_[o.idx].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
    });
    return o;
  }

  // --- convolutions ---------------------------------------------------------

  Var conv2d_same(Var x, Var k, Var b) {
    Tensor out = conv2d_same_forward(val(x.idx), val(k.idx), val(b.idx));
    Var o = emit(std::move(out), {x, k, b});
    record(o, [this, x, k, b, o] {
      TensorT<S> dout;
      dout.shape = nodes_[o.idx].owned.shape;
      dout.data = nodes_[o.idx].grad;
      conv2d_same_backward(val(x.idx), val(k.idx), dout,
                           needs(x) ? &grad_buf(x.idx) : nullptr,
                           needs(k) ? &grad_buf(k.idx) : nullptr,
                           needs(b) ? &grad_buf(b.idx) : nullptr);
    });
    return o;
  }

  Var conv1d_same(Var x, Var k, Var b) {
    Tensor out = conv1d_same_forward(val(x.idx), val(k.idx), val(b.idx));
    Var o = emit(std::move(out), {x, k, b});
    record(o, [this, x, k, b, o] {
      TensorT<S> dout;
      dout.shape = nodes_[o.idx].owned.shape;
      dout.data = nodes_[o.idx].grad;
      conv1d_same_backward(val(x.idx), val(k.idx), dout,
                           needs(x) ? &grad_buf(x.idx) : nullptr,
                           needs(k) ? &grad_buf(k.idx) : nullptr,
                           needs(b) ? &grad_buf(b.idx) : nullptr);
    });
    return o;
  }

  // --- shape ops ------------------------------------------------------------

  Var reshape(Var a, Shape new_shape) {
    const Tensor& ta = val(a.idx);
    check_shape_valid(new_shape);
    if (shape_numel(new_shape) != ta.numel())
      throw std::invalid_argument("reshape: " + shape_str(ta.shape) + " to " +
                                  shape_str(new_shape) + " changes element count");
    Tensor out;
    out.shape = std::move(new_shape);
    out.data = ta.data;
    Var o = emit(std::move(out), {a});
    record(o, [this, a, o] {
      if (needs(a)) axpy(grad_buf(a.idx), nodes_[o.idx].grad, S(1));
    });
    return o;
  }

  Var transpose2d(Var a) {
    const Tensor& ta = val(a.idx);
    if (ta.rank() != 2)
      throw std::invalid_argument("transpose2d: rank-2 input required, got " +
                                  shape_str(ta.shape));
    const int m = ta.shape[0], n = ta.shape[1];
    Tensor out(Shape{n, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
    Var o = emit(std::move(out), {a});
    record(o, [this, a, o, m, n] {
      if (!needs(a)) return;
      auto& ga = grad_buf(a.idx);
      const auto& g = nodes_[o.idx].grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
    });
    return o;
  }

  // --- lookup / pooling -------------------------------------------------------

  Var embedding(Var table, const IdGrid& ids) {
    const Tensor& tt = val(table.idx);
    if (tt.rank() != 2)
      throw std::invalid_argument("embedding: table must be rank 2 (V,d), got " +
                                  shape_str(tt.shape));
    const int v = tt.shape[0], d = tt.shape[1];
    const int t = ids.shape[0], l = ids.shape[1];
    Tensor out(Shape{t, l, d});
    for (int i = 0; i < t; ++i) {
      for (int j = 0; j < l; ++j) {
        const int32_t id = ids.at(i, j);
        if (id < 0 || id >= v)
          throw std::out_of_range("embedding: token id " + std::to_string(id) +
                                  " out of vocabulary range [0," + std::to_string(v) + ")");
        std::copy_n(&tt.data[static_cast<size_t>(id) * d], d, &out.at(i, j, 0));
      }
    }
    Var o = emit(std::move(out), {table});
    record(o, [this, table, o, ids, d] {
      if (!needs(table)) return;
      auto& gt = grad_buf(table.idx);
      const auto& g = nodes_[o.idx].grad;
      const int t2 = ids.shape[0], l2 = ids.shape[1];
      for (int i = 0; i < t2; ++i)
        for (int j = 0; j < l2; ++j) {
          const size_t src = (static_cast<size_t>(i) * l2 + j) * d;
          const size_t dst = static_cast<size_t>(ids.at(i, j)) * d;
          for (int c = 0; c < d; ++c) gt[dst + c] += g[src + c];
        }
    });
    return o;
  }

  Var maxpool_axis(Var x, int axis, const Mask* mask = nullptr,
                   EmptySlice empty = EmptySlice::kError) {
    std::vector<int> argmax;
    Tensor out = maxpool_axis_forward(val(x.idx), axis, mask, empty, &argmax);
    Var o = emit(std::move(out), {x});
    Shape in_shape = val(x.idx).shape;
    record(o, [this, x, o, axis, in_shape = std::move(in_shape),
               argmax = std::move(argmax)] {
      if (!needs(x)) return;
      TensorT<S> dout;
      dout.shape = nodes_[o.idx].owned.shape;
      dout.data = nodes_[o.idx].grad;
      maxpool_axis_backward(in_shape, axis, argmax, dout, &grad_buf(x.idx));
    });
    return o;
  }

  // --- reductions / scalars -----------------------------------------------

  Var sum_all(Var a) {
    const Tensor& ta = val(a.idx);
    S acc = S(0);
    for (S v : ta.data) acc += v;
    Tensor out(Shape{1});
    out.data[0] = acc;
    Var o = emit(std::move(out), {a});
    record(o, [this, a, o] {
      if (!needs(a)) return;
      const S g = nodes_[o.idx].grad[0];
      auto& ga = grad_buf(a.idx);
      for (auto& v : ga) v += g;
    });
    return o;
  }

  Var mean_all(Var a) {
    const S inv = S(1) / static_cast<S>(val(a.idx).numel());
    return scale(sum_all(a), inv);
  }

  Var dot(Var a, Var b) {
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (ta.rank() != 1 || tb.rank() != 1 || ta.shape != tb.shape)
      throw std::invalid_argument("dot: rank-1 tensors of equal length required, got " +
                                  shape_str(ta.shape) + " and " + shape_str(tb.shape));
    S acc = S(0);
    for (size_t i = 0; i < ta.data.size(); ++i) acc += ta.data[i] * tb.data[i];
    Tensor out(Shape{1});
    out.data[0] = acc;
    Var o = emit(std::move(out), {a, b});
    record(o, [this, a, b, o] {
      const S g = nodes_[o.idx].grad[0];
      if (needs(a)) axpy(grad_buf(a.idx), val(b.idx).data, g);
      if (needs(b)) axpy(grad_buf(b.idx), val(a.idx).data, g);
    });
    return o;
  }

  Var stack_scalars(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_scalars: empty input");
    Tensor out(Shape{static_cast<int>(parts.size())});
    bool any_grad = false;
    for (size_t i = 0; i < parts.size(); ++i) {
      const Tensor& tp = val(parts[i].idx);
      if (tp.numel() != 1)
        throw std::invalid_argument("stack_scalars: element " + std::to_string(i) +
                                    " is not scalar: " + shape_str(tp.shape));
      out.data[i] = tp.data[0];
      any_grad = any_grad || needs(parts[i]);
    }
    Var o = emit(std::move(out), {});
    if (any_grad) {
      mark_needs_grad(o);
      record(o, [this, parts, o] {
        const auto& g = nodes_[o.idx].grad;
        for (size_t i = 0; i < parts.size(); ++i)
          if (needs(parts[i])) grad_buf(parts[i].idx)[0] += g[i];
      });
    }
    return o;
  }

  // log(sum(exp(x))) over a rank-1 tensor, stabilized by max subtraction.
  Var logsumexp(Var a) {
    const Tensor& ta = val(a.idx);
    if (ta.rank() != 1)
      throw std::invalid_argument("logsumexp: rank-1 input required, got " +
                                  shape_str(ta.shape));
    const S m = *std::max_element(ta.data.begin(), ta.data.end());
    S acc = S(0);
    for (S v : ta.data) acc += std::exp(v - m);
    Tensor out(Shape{1});
    out.data[0] = m + std::log(acc);
    Var o = emit(std::move(out), {a});
    record(o, [this, a, o] {
      if (!needs(a)) return;
      const S g = nodes_[o.idx].grad[0];
      const S lse = nodes_[o.idx].owned.data[0];
      const auto& x = val(a.idx).data;
      auto& ga = grad_buf(a.idx);
      for (size_t i = 0; i < x.size(); ++i) ga[i] += g * std::exp(x[i] - lse);
    });
    return o;
  }

  // Cosine similarity of two rank-1 vectors; zero-norm inputs are rejected
  // as degenerate representations.
  Var cosine_sim(Var a, Var b) {
    const Tensor& ta = val(a.idx);
    const Tensor& tb = val(b.idx);
    if (ta.rank() != 1 || tb.rank() != 1 || ta.shape != tb.shape)
      throw std::invalid_argument("cosine_sim: rank-1 tensors of equal length required, got " +
                                  shape_str(ta.shape) + " and " + shape_str(tb.shape));
    S aa = S(0), bb = S(0), ab = S(0);
    for (size_t i = 0; i < ta.data.size(); ++i) {
      aa += ta.data[i] * ta.data[i];
      bb += tb.data[i] * tb.data[i];
      ab += ta.data[i] * tb.data[i];
    }
    if (aa == S(0) || bb == S(0))
      throw std::runtime_error("cosine_sim: zero-norm embedding");
    const S na = std::sqrt(aa), nb = std::sqrt(bb);
    const S sim = ab / (na * nb);
    Tensor out(Shape{1});
    out.data[0] = sim;
    Var o = emit(std::move(out), {a, b});
    record(o, [this, a, b, o, na, nb, sim] {
      const S g = nodes_[o.idx].grad[0];
      const auto& xa = val(a.idx).data;
      const auto& xb = val(b.idx).data;
      if (needs(a)) {
        auto& ga = grad_buf(a.idx);
        for (size_t i = 0; i < xa.size(); ++i)
          ga[i] += g * (xb[i] / (na * nb) - sim * xa[i] / (na * na));
      }
      if (needs(b)) {
        auto& gb = grad_buf(b.idx);
        for (size_t i = 0; i < xb.size(); ++i)
          gb[i] += g * (xa[i] / (na * nb) - sim * xb[i] / (nb * nb));
      }
    });
    return o;
  }

  // Mean binary cross-entropy; probabilities clamped to [1e-7, 1-1e-7].
  Var bce_loss(Var scores, const std::vector<S>& labels) {
    const Tensor& ts = val(scores.idx);
    if (ts.rank() != 1 || ts.data.size() != labels.size())
      throw std::invalid_argument("bce_loss: scores " + shape_str(ts.shape) + " vs " +
                                  std::to_string(labels.size()) + " labels");
    const S lo = S(1e-7), hi = S(1) - S(1e-7);
    const S inv_n = S(1) / static_cast<S>(labels.size());
    S acc = S(0);
    for (size_t i = 0; i < labels.size(); ++i) {
      const S s = std::clamp(ts.data[i], lo, hi);
      acc -= labels[i] * std::log(s) + (S(1) - labels[i]) * std::log(S(1) - s);
    }
    Tensor out(Shape{1});
    out.data[0] = acc * inv_n;
    Var o = emit(std::move(out), {scores});
    record(o, [this, scores, o, labels, lo, hi, inv_n] {
      if (!needs(scores)) return;
      const S g = nodes_[o.idx].grad[0];
      const auto& x = val(scores.idx).data;
      auto& gs = grad_buf(scores.idx);
      for (size_t i = 0; i < labels.size(); ++i) {
        if (x[i] <= lo || x[i] >= hi) continue;  // flat in the clamp region
        gs[i] += g * inv_n * (x[i] - labels[i]) / (x[i] * (S(1) - x[i]));
      }
    });
    return o;
  }

  // --- backward -------------------------------------------------------------

  void backward(Var loss) {
    if (val(loss.idx).numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(val(loss.idx).shape));
    grad_buf(loss.idx)[0] = S(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      if (!nodes_[it->output].grad.empty()) it->back();
    }
    for (Node& n : nodes_) {
      if (n.external && n.external->requires_grad && !n.grad.empty()) {
        n.external->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) n.external->grad[i] += n.grad[i];
      }
    }
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<S> owned;
    TensorT<S>* external = nullptr;
    bool needs_grad = false;
    std::vector<S> grad;
  };
  struct Step {
    int output = -1;
    std::function<void()> back;
  };

  const Tensor& val(int i) const {
    return nodes_[i].external ? *nodes_[i].external : nodes_[i].owned;
  }
  bool needs(Var v) const { return nodes_[v.idx].needs_grad; }
  void mark_needs_grad(Var v) { nodes_[v.idx].needs_grad = true; }

  std::vector<S>& grad_buf(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() != val(i).data.size()) n.grad.assign(val(i).data.size(), S(0));
    return n.grad;
  }

  static void axpy(std::vector<S>& y, const std::vector<S>& x, S a) {
    for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var emit(Tensor out, std::initializer_list<Var> inputs) {
#ifndef NDEBUG
    if (!out.all_finite())
      throw std::runtime_error("non-finite value produced by forward op");
#endif
    Node n;
    n.owned = std::move(out);
    for (Var in : inputs) n.needs_grad = n.needs_grad || needs(in);
    return push(std::move(n));
  }

  // Recording is skipped entirely when the output cannot affect any gradient.
  template <class F>
  void record(Var out, F&& back) {
    if (!nodes_[out.idx].needs_grad) return;
    steps_.push_back(Step{out.idx, std::forward<F>(back)});
  }

  std::vector<Node> nodes_;
  std::vector<Step> steps_;
};

using Tape = TapeT<float>;

}  // namespace dconv
