#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "slotner/nn/array.hpp"
#include "slotner/nn/kernels.hpp"

namespace slotner::nn {

// A learnable array with its gradient accumulator. Frozen parameters
// still take part in the forward pass but never receive gradient.
template <class T>
struct Parameter {
  Array<T> value;
  Array<T> grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Array<T> v) : value(std::move(v)), grad(value.shape) {}

  void zero_grad() {
    if (grad.shape != value.shape) grad = Array<T>(value.shape);
    grad.fill(T{0});
  }
};

struct Var {
  std::uint32_t id = 0;
};

// Tape for reverse-mode differentiation. Every op appends one node holding
// its forward value; backward() replays the tape in reverse. Nodes refer to
// each other by index, and the closures capture `this`, so a Graph is pinned
// in memory.
template <class T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }

  const Array<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient of a node after backward(); empty when the node had none.
  const Array<T>& grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external_grad ? *n.external_grad : n.grad;
  }

  Var constant(Array<T> a) { return push(std::move(a), false); }

  Var param(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    n.needs_grad = p.trainable;
    if (p.trainable) {
      if (p.grad.shape != p.value.shape) p.grad = Array<T>(p.value.shape);
      n.external_grad = &p.grad;
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  // Differentiable leaf owned by the graph (used for gradient checks of
  // intermediate quantities).
  Var leaf(Array<T> a) { return push(std::move(a), true); }

  Var matmul(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    require_rank2("matmul", av);
    require_rank2("matmul", bv);
    if (av.cols() != bv.rows()) throw_shape("matmul", av.shape, bv.shape);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Array<T> out({m, n});
    kernel::gemm_acc(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
    Var o = push(std::move(out), any_grad(a, b));
    on_backward(o, [this, a, b, o, m, k, n] {
      const auto& g = grad(o);
      if (requires_grad(a)) {
        kernel::gemm_nt_acc(g.data.data(), value(b).data.data(),
                            grad_ref(a).data.data(), m, n, k);
      }
      if (requires_grad(b)) {
        kernel::gemm_tn_acc(value(a).data.data(), g.data.data(),
                            grad_ref(b).data.data(), m, k, n);
      }
    });
    return o;
  }

  Var add(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.shape != bv.shape) throw_shape("add", av.shape, bv.shape);
    Array<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    Var o = push(std::move(out), any_grad(a, b));
    on_backward(o, [this, a, b, o] {
      const auto& g = grad(o);
      for (Var x : {a, b}) {
        if (!requires_grad(x)) continue;
        auto& gx = grad_ref(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
      }
    });
    return o;
  }

  // x[r x c] + bias[1 x c] broadcast over rows.
  Var add_row(Var x, Var bias) {
    const auto& xv = value(x);
    const auto& bv = value(bias);
    require_rank2("add_row", xv);
    if (bv.size() != xv.cols()) throw_shape("add_row", xv.shape, bv.shape);
    Array<T> out = xv;
    const std::size_t c = xv.cols();
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t j = 0; j < c; ++j) out.data[r * c + j] += bv.data[j];
    Var o = push(std::move(out), any_grad(x, bias));
    on_backward(o, [this, x, bias, o, c] {
      const auto& g = grad(o);
      if (requires_grad(x)) {
        auto& gx = grad_ref(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
      }
      if (requires_grad(bias)) {
        auto& gb = grad_ref(bias);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i % c] += g.data[i];
      }
    });
    return o;
  }

  // Rows of table[V x h] selected by ids.
  Var embedding(Var table, const std::vector<std::size_t>& ids) {
    const auto& tv = value(table);
    require_rank2("embedding", tv);
    const std::size_t h = tv.cols();
    Array<T> out({ids.size(), h});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= tv.rows()) {
        throw ShapeError("embedding: id " + std::to_string(ids[i]) +
                         " outside table " + shape_string(tv.shape));
      }
      std::copy_n(tv.row(ids[i]), h, out.row(i));
    }
    Var o = push(std::move(out), requires_grad(table));
    on_backward(o, [this, table, o, ids, h] {
      const auto& g = grad(o);
      auto& gt = grad_ref(table);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* dst = gt.row(ids[i]);
        const T* src = g.row(i);
        for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
      }
    });
    return o;
  }

  // Rows of a stacked above rows of b.
  Var concat_rows(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    require_rank2("concat_rows", av);
    require_rank2("concat_rows", bv);
    if (av.cols() != bv.cols()) throw_shape("concat_rows", av.shape, bv.shape);
    Array<T> out({av.rows() + bv.rows(), av.cols()});
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.size());
    const std::size_t split = av.size();
    Var o = push(std::move(out), any_grad(a, b));
    on_backward(o, [this, a, b, o, split] {
      const auto& g = grad(o);
      if (requires_grad(a)) {
        auto& ga = grad_ref(a);
        for (std::size_t i = 0; i < split; ++i) ga.data[i] += g.data[i];
      }
      if (requires_grad(b)) {
        auto& gb = grad_ref(b);
        for (std::size_t i = split; i < g.size(); ++i) gb.data[i - split] += g.data[i];
      }
    });
    return o;
  }

  // Selected rows of x; indices may repeat.
  Var gather_rows(Var x, const std::vector<std::size_t>& rows) {
    const auto& xv = value(x);
    require_rank2("gather_rows", xv);
    for (auto r : rows) {
      if (r >= xv.rows()) {
        throw ShapeError("gather_rows: row " + std::to_string(r) + " outside " +
                         shape_string(xv.shape));
      }
    }
    return embedding(x, rows);
  }

  Var reshape(Var x, Shape shape) {
    const auto& xv = value(x);
    if (shape_size(shape) != xv.size()) throw_shape("reshape", xv.shape, shape);
    Array<T> out(std::move(shape), xv.data);
    Var o = push(std::move(out), requires_grad(x));
    on_backward(o, [this, x, o] {
      const auto& g = grad(o);
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
    });
    return o;
  }

  Var softmax_rows(Var x) {
    const auto& xv = value(x);
    require_rank2("softmax_rows", xv);
    Array<T> out = xv;
    const std::size_t c = xv.cols();
    for (std::size_t r = 0; r < xv.rows(); ++r) kernel::softmax_row(out.row(r), c);
    Var o = push(std::move(out), requires_grad(x));
    on_backward(o, [this, x, o, c] {
      const auto& g = grad(o);
      const auto& y = value(o);
      auto& gx = grad_ref(x);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        accum_t<T> dot{0};
        for (std::size_t j = 0; j < c; ++j) dot += g(r, j) * y(r, j);
        for (std::size_t j = 0; j < c; ++j) gx(r, j) += y(r, j) * (g(r, j) - dot);
      }
    });
    return o;
  }

  Var sigmoid(Var x) {
    return unary(x, [](T v) { return sigmoid_value(v); },
                 [](T, T y) { return y * (T{1} - y); });
  }

  Var tanh(Var x) {
    return unary(x, [](T v) { return std::tanh(v); },
                 [](T, T y) { return T{1} - y * y; });
  }

  // tanh approximation of GELU.
  Var gelu(Var x) {
    return unary(x, [](T v) { return gelu_value(v); }, [](T v, T) { return gelu_derivative(v); });
  }

  static T gelu_value(T v) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
    return T(0.5) * v * (T{1} + std::tanh(c * (v + T(0.044715) * v * v * v)));
  }

  static T gelu_derivative(T v) {
    const T c = static_cast<T>(0.7978845608028654);
    const T u = c * (v + T(0.044715) * v * v * v);
    const T t = std::tanh(u);
    return T(0.5) * (T{1} + t) + T(0.5) * v * (T{1} - t * t) * c * (T{1} + T(3 * 0.044715) * v * v);
  }

  Var relu(Var x) {
    return unary(x, [](T v) { return v > T{0} ? v : T{0}; },
                 [](T v, T) { return v > T{0} ? T{1} : T{0}; });
  }

  // Row-wise layer normalization with learnable gain and shift [1 x h].
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const auto& xv = value(x);
    require_rank2("layer_norm", xv);
    const std::size_t rows = xv.rows(), h = xv.cols();
    if (value(gamma).size() != h) throw_shape("layer_norm(gamma)", xv.shape, value(gamma).shape);
    if (value(beta).size() != h) throw_shape("layer_norm(beta)", xv.shape, value(beta).shape);
    auto xhat = std::make_shared<Array<T>>(xv.shape);
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    Array<T> out(xv.shape);
    const auto& gv = value(gamma).data;
    const auto& bv = value(beta).data;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.row(r);
      accum_t<T> mean{0};
      for (std::size_t j = 0; j < h; ++j) mean += xr[j];
      mean /= static_cast<T>(h);
      accum_t<T> var{0};
      for (std::size_t j = 0; j < h; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= static_cast<T>(h);
      const T is = T{1} / std::sqrt(var + eps);
      (*inv_std)[r] = is;
      for (std::size_t j = 0; j < h; ++j) {
        const T n = (xr[j] - mean) * is;
        (*xhat)(r, j) = n;
        out(r, j) = n * gv[j] + bv[j];
      }
    }
    Var o = push(std::move(out), any_grad(x, gamma) || requires_grad(beta));
    on_backward(o, [this, x, gamma, beta, o, xhat, inv_std, rows, h] {
      const auto& g = grad(o);
      const auto& gv = value(gamma).data;
      if (requires_grad(gamma) || requires_grad(beta)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < h; ++j) {
            if (requires_grad(gamma)) grad_ref(gamma).data[j] += g(r, j) * (*xhat)(r, j);
            if (requires_grad(beta)) grad_ref(beta).data[j] += g(r, j);
          }
        }
      }
      if (requires_grad(x)) {
        auto& gx = grad_ref(x);
        const T inv_h = T{1} / static_cast<T>(h);
        for (std::size_t r = 0; r < rows; ++r) {
          accum_t<T> sum_d{0}, sum_dx{0};
          for (std::size_t j = 0; j < h; ++j) {
            const T d = g(r, j) * gv[j];
            sum_d += d;
            sum_dx += d * (*xhat)(r, j);
          }
          const T is = (*inv_std)[r];
          for (std::size_t j = 0; j < h; ++j) {
            const T d = g(r, j) * gv[j];
            gx(r, j) += is * (d - inv_h * sum_d - (*xhat)(r, j) * inv_h * sum_dx);
          }
        }
      }
    });
    return o;
  }

  // Multi-head scaled dot-product attention over already projected
  // queries [nq x h], keys and values [nk x h]. Blocked pairs of `mask`
  // (may be null) receive exactly zero weight.
  Var attention(Var q, Var k, Var v, std::size_t heads, const AttentionMask* mask) {
    const auto& qv = value(q);
    const auto& kv = value(k);
    const auto& vv = value(v);
    require_rank2("attention", vv);
    if (vv.shape != kv.shape) throw_shape("attention(k, v)", kv.shape, vv.shape);
    auto weights = std::make_shared<Array<T>>(kernel::attention_weights(qv, kv, heads, mask));
    const std::size_t nq = qv.rows(), nk = kv.rows(), h = qv.cols(), d = h / heads;
    Array<T> out({nq, h});
    for (std::size_t hd = 0; hd < heads; ++hd) {
      for (std::size_t i = 0; i < nq; ++i) {
        const T* w = weights->row(hd * nq + i);
        T* o = out.row(i) + hd * d;
        for (std::size_t j = 0; j < nk; ++j) {
          const T wj = w[j];
          if (wj == T{0}) continue;
          const T* vj = vv.row(j) + hd * d;
          for (std::size_t p = 0; p < d; ++p) o[p] += wj * vj[p];
        }
      }
    }
    last_attention_ = weights;
    Var o = push(std::move(out), any_grad(q, k) || requires_grad(v));
    on_backward(o, [this, q, k, v, o, weights, heads, nq, nk, d] {
      const auto& g = grad(o);
      const auto& qv = value(q);
      const auto& kv = value(k);
      const auto& vv = value(v);
      const T scale = T{1} / std::sqrt(static_cast<T>(d));
      std::vector<accum_t<T>> dp(nk), ds(nk);
      Array<T>* gq = requires_grad(q) ? &grad_ref(q) : nullptr;
      Array<T>* gk = requires_grad(k) ? &grad_ref(k) : nullptr;
      Array<T>* gv = requires_grad(v) ? &grad_ref(v) : nullptr;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        for (std::size_t i = 0; i < nq; ++i) {
          const T* w = weights->row(hd * nq + i);
          const T* gi = g.row(i) + hd * d;
          accum_t<T> dot{0};
          for (std::size_t j = 0; j < nk; ++j) {
            const T* vj = vv.row(j) + hd * d;
            accum_t<T> acc{0};
            for (std::size_t p = 0; p < d; ++p) acc += gi[p] * vj[p];
            dp[j] = acc;
            dot += acc * w[j];
            if (gv && w[j] != T{0}) {
              T* gvj = gv->row(j) + hd * d;
              for (std::size_t p = 0; p < d; ++p) gvj[p] += w[j] * gi[p];
            }
          }
          for (std::size_t j = 0; j < nk; ++j) ds[j] = w[j] * (dp[j] - dot) * scale;
          const T* qi = qv.row(i) + hd * d;
          for (std::size_t j = 0; j < nk; ++j) {
            if (ds[j] == 0) continue;
            const T* kj = kv.row(j) + hd * d;
            if (gq) {
              T* gqi = gq->row(i) + hd * d;
              for (std::size_t p = 0; p < d; ++p) gqi[p] += ds[j] * kj[p];
            }
            if (gk) {
              T* gkj = gk->row(j) + hd * d;
              for (std::size_t p = 0; p < d; ++p) gkj[p] += ds[j] * qi[p];
            }
          }
        }
      }
    });
    return o;
  }

  // Attention weights of the most recent attention() call, [heads*nq x nk].
  const Array<T>& last_attention_weights() const { return *last_attention_; }

  // out[(i * n + j)] = a[i] + b[j] for a [m x h], b [n x h].
  Var pairwise_add(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    require_rank2("pairwise_add", av);
    require_rank2("pairwise_add", bv);
    if (av.cols() != bv.cols()) throw_shape("pairwise_add", av.shape, bv.shape);
    const std::size_t m = av.rows(), n = bv.rows(), h = av.cols();
    Array<T> out({m * n, h});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T* dst = out.row(i * n + j);
        const T* ai = av.row(i);
        const T* bj = bv.row(j);
        for (std::size_t p = 0; p < h; ++p) dst[p] = ai[p] + bj[p];
      }
    Var o = push(std::move(out), any_grad(a, b));
    on_backward(o, [this, a, b, o, m, n, h] {
      const auto& g = grad(o);
      Array<T>* ga = requires_grad(a) ? &grad_ref(a) : nullptr;
      Array<T>* gb = requires_grad(b) ? &grad_ref(b) : nullptr;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T* src = g.row(i * n + j);
          if (ga) {
            T* d = ga->row(i);
            for (std::size_t p = 0; p < h; ++p) d[p] += src[p];
          }
          if (gb) {
            T* d = gb->row(j);
            for (std::size_t p = 0; p < h; ++p) d[p] += src[p];
          }
        }
    });
    return o;
  }

  struct Cell {
    std::size_t row;
    std::size_t col;
  };

  // log(max(p, floor)) for p at each cell, as a column [cells x 1].
  Var log_gather(Var p, const std::vector<Cell>& cells, T floor = T(1e-12)) {
    const auto& pv = value(p);
    require_rank2("log_gather", pv);
    Array<T> out({cells.size(), 1});
    for (std::size_t i = 0; i < cells.size(); ++i) {
      check_cell("log_gather", pv, cells[i]);
      out.data[i] = std::log(std::max(pv(cells[i].row, cells[i].col), floor));
    }
    Var o = push(std::move(out), requires_grad(p));
    on_backward(o, [this, p, o, cells, floor] {
      const auto& g = grad(o);
      const auto& pv = value(p);
      auto& gp = grad_ref(p);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const T x = pv(cells[i].row, cells[i].col);
        if (x > floor) gp(cells[i].row, cells[i].col) += g.data[i] / x;
      }
    });
    return o;
  }

  // log softmax(logits)[cell], computed in log space and floored at
  // log(floor); equals log_gather(softmax_rows(logits), cells) without the
  // underflow of the probability path.
  Var log_softmax_gather(Var logits, const std::vector<Cell>& cells, T floor = T(1e-12)) {
    const auto& lv = value(logits);
    require_rank2("log_softmax_gather", lv);
    const std::size_t c = lv.cols();
    auto probs = std::make_shared<Array<T>>(lv);
    std::vector<T> lse(lv.rows());
    for (std::size_t r = 0; r < lv.rows(); ++r) {
      const T* x = lv.row(r);
      T mx = x[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
      accum_t<T> s{0};
      for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
      lse[r] = mx + std::log(s);
      for (std::size_t j = 0; j < c; ++j) (*probs)(r, j) = std::exp(x[j] - lse[r]);
    }
    const T log_floor = std::log(floor);
    Array<T> out({cells.size(), 1});
    std::vector<unsigned char> live(cells.size(), 1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      check_cell("log_softmax_gather", lv, cells[i]);
      const T v = lv(cells[i].row, cells[i].col) - lse[cells[i].row];
      live[i] = v > log_floor;
      out.data[i] = std::max(v, log_floor);
    }
    Var o = push(std::move(out), requires_grad(logits));
    on_backward(o, [this, logits, o, cells, probs, live, c] {
      const auto& g = grad(o);
      auto& gl = grad_ref(logits);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!live[i]) continue;
        const std::size_t r = cells[i].row;
        for (std::size_t j = 0; j < c; ++j) gl(r, j) -= g.data[i] * (*probs)(r, j);
        gl(r, cells[i].col) += g.data[i];
      }
    });
    return o;
  }

  // log sigmoid(x) (or log(1 - sigmoid(x)) when `complement`) at each cell,
  // computed stably from the logit and floored at log(floor).
  Var log_sigmoid_gather(Var logits, const std::vector<Cell>& cells, bool complement,
                         T floor = T(1e-12)) {
    const auto& lv = value(logits);
    require_rank2("log_sigmoid_gather", lv);
    const T log_floor = std::log(floor);
    Array<T> out({cells.size(), 1});
    std::vector<unsigned char> live(cells.size(), 1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      check_cell("log_sigmoid_gather", lv, cells[i]);
      const T x = lv(cells[i].row, cells[i].col);
      const T v = -softplus(complement ? x : -x);
      live[i] = v > log_floor;
      out.data[i] = std::max(v, log_floor);
    }
    Var o = push(std::move(out), requires_grad(logits));
    on_backward(o, [this, logits, o, cells, live, complement] {
      const auto& g = grad(o);
      const auto& lv = value(logits);
      auto& gl = grad_ref(logits);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!live[i]) continue;
        const T s = sigmoid_value(lv(cells[i].row, cells[i].col));
        gl(cells[i].row, cells[i].col) += g.data[i] * (complement ? -s : T{1} - s);
      }
    });
    return o;
  }

  // Scalar [1 x 1] = sum_i weight_i * sum(term_i).
  Var weighted_sum(const std::vector<std::pair<Var, T>>& terms) {
    T total{0};
    bool ng = false;
    for (const auto& [v, w] : terms) {
      accum_t<T> s{0};
      for (T x : value(v).data) s += x;
      total += w * s;
      ng = ng || requires_grad(v);
    }
    Var o = push(Array<T>({1, 1}, std::vector<T>{total}), ng);
    on_backward(o, [this, terms, o] {
      const T g = grad(o).data[0];
      for (const auto& [v, w] : terms) {
        if (!requires_grad(v)) continue;
        for (auto& x : grad_ref(v).data) x += w * g;
      }
    });
    return o;
  }

  // Seeds d(root)/d(root) = 1 for a scalar root and runs the tape backwards.
  void backward(Var root) {
    if (value(root).size() != 1) {
      throw ShapeError("backward: root must be a scalar, got " +
                       shape_string(value(root).shape));
    }
    if (!requires_grad(root)) return;
    grad_ref(root).data[0] += T{1};
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.empty()) continue;
      n.back();
    }
  }

  static T sigmoid_value(T v) {
    if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
    const T e = std::exp(v);
    return e / (T{1} + e);
  }

  static T softplus(T v) {
    return v > T{0} ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }

 private:
  struct Node {
    Array<T> owned;
    const Array<T>* external = nullptr;
    Array<T> grad;
    Array<T>* external_grad = nullptr;
    std::function<void()> back;
    bool needs_grad = false;
  };

  Var push(Array<T> value, bool needs_grad) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool any_grad(Var a, Var b) const { return requires_grad(a) || requires_grad(b); }

  template <class F>
  void on_backward(Var o, F&& f) {
    if (nodes_[o.id].needs_grad) nodes_[o.id].back = std::forward<F>(f);
  }

  Array<T>& grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.external_grad) return *n.external_grad;
    if (n.grad.empty()) n.grad = Array<T>(value(v).shape);
    return n.grad;
  }

  template <class F, class D>
  Var unary(Var x, F f, D df) {
    const auto& xv = value(x);
    Array<T> out = xv;
    for (auto& e : out.data) e = f(e);
    Var o = push(std::move(out), requires_grad(x));
    on_backward(o, [this, x, o, df] {
      const auto& g = grad(o);
      const auto& xv = value(x);
      const auto& y = value(o);
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * df(xv.data[i], y.data[i]);
    });
    return o;
  }

  static void check_cell(const char* op, const Array<T>& a, const Cell& c) {
    if (c.row >= a.rows() || c.col >= a.cols()) {
      throw ShapeError(std::string(op) + ": cell (" + std::to_string(c.row) + ", " +
                       std::to_string(c.col) + ") outside " + shape_string(a.shape));
    }
  }

  std::vector<Node> nodes_;
  std::shared_ptr<Array<T>> last_attention_;
};

}  // namespace slotner::nn
