#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cmwm/param.hpp"
#include "cmwm/rng.hpp"
#include "cmwm/tensor.hpp"

namespace cmwm {

/// Reverse-mode autodiff tape. One Graph per forward pass; nodes are created
/// in topological order and backward() replays them in reverse. Values are
/// computed eagerly. Parameter leaves reference the parameter's storage and
/// accumulate gradients locally until flush_param_grads(), which makes
/// batched graphs safe to build and differentiate on worker threads as long
/// as the flush itself is serialized.
template <typename T>
class Graph {
 public:
  using NodeId = int;

  // ---- leaves ----

  NodeId constant(Tensor<T> v) { return make_leaf(std::move(v), false); }

  NodeId input(Tensor<T> v, bool needs_grad = true) {
    return make_leaf(std::move(v), needs_grad);
  }

  NodeId param(Parameter<T>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    Node n;
    n.external = &p.value;
    n.needs_grad = p.trainable;
    nodes_.push_back(std::move(n));
    const NodeId id = static_cast<NodeId>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    params_.emplace_back(&p, id);
    return id;
  }

  // ---- access ----

  const Tensor<T>& value(NodeId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.external ? *n.external : n.owned;
  }

  T scalar(NodeId id) const {
    const Tensor<T>& v = value(id);
    if (v.numel() != 1) throw std::logic_error("scalar: node is not scalar");
    return v[0];
  }

  const Tensor<T>& grad(NodeId id) const {
    return nodes_[static_cast<size_t>(id)].grad;
  }

  bool needs_grad(NodeId id) const {
    return nodes_[static_cast<size_t>(id)].needs_grad;
  }

  // ---- elementwise / linear ----

  NodeId add(NodeId a, NodeId b) {
    check_same_shape(a, b, "add");
    Tensor<T> out = value(a);
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return make_op(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      if (g.needs_grad(a)) {
        Tensor<T>& da = g.grad_buf(a);
        for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
      }
      if (g.needs_grad(b)) {
        Tensor<T>& db = g.grad_buf(b);
        for (int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i];
      }
    });
  }

  /// wa*a + wb*b with constant weights, any shape.
  NodeId add_scaled(NodeId a, NodeId b, T wa, T wb) {
    check_same_shape(a, b, "add_scaled");
    Tensor<T> out = value(a);
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = wa * out[i] + wb * vb[i];
    return make_op(std::move(out), {a, b}, [a, b, wa, wb](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      if (g.needs_grad(a)) {
        Tensor<T>& da = g.grad_buf(a);
        for (int64_t i = 0; i < dy.numel(); ++i) da[i] += wa * dy[i];
      }
      if (g.needs_grad(b)) {
        Tensor<T>& db = g.grad_buf(b);
        for (int64_t i = 0; i < dy.numel(); ++i) db[i] += wb * dy[i];
      }
    });
  }

  NodeId scale(NodeId a, T s) {
    Tensor<T> out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return make_op(std::move(out), {a}, [a, s](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      if (!g.needs_grad(a)) return;
      Tensor<T>& da = g.grad_buf(a);
      for (int64_t i = 0; i < dy.numel(); ++i) da[i] += s * dy[i];
    });
  }

  /// x * s where s is a learned scalar node (e.g. tanh of a gate).
  NodeId scale_by(NodeId x, NodeId s) {
    if (value(s).numel() != 1)
      throw std::invalid_argument("scale_by: scale must be scalar");
    const T sv = value(s)[0];
    Tensor<T> out = value(x);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    return make_op(std::move(out), {x, s}, [x, s, sv](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& vx = g.value(x);
      if (g.needs_grad(x)) {
        Tensor<T>& dx = g.grad_buf(x);
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += sv * dy[i];
      }
      if (g.needs_grad(s)) {
        T acc = T(0);
        for (int64_t i = 0; i < dy.numel(); ++i) acc += dy[i] * vx[i];
        g.grad_buf(s)[0] += acc;
      }
    });
  }

  /// Adds a row vector b[n] to every row of x[m,n].
  NodeId add_bias(NodeId x, NodeId b) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vb = value(b);
    if (vx.rank() != 2 || vb.numel() != vx.dim(1))
      throw std::invalid_argument("add_bias: shape mismatch");
    Tensor<T> out = vx;
    const int m = vx.dim(0), n = vx.dim(1);
    for (int i = 0; i < m; ++i) {
      T* row = out.row(i);
      for (int j = 0; j < n; ++j) row[j] += vb[j];
    }
    return make_op(std::move(out), {x, b}, [x, b, m, n](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      if (g.needs_grad(x)) {
        Tensor<T>& dx = g.grad_buf(x);
        for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
      }
      if (g.needs_grad(b)) {
        Tensor<T>& db = g.grad_buf(b);
        for (int i = 0; i < m; ++i) {
          const T* row = dy.row(i);
          for (int j = 0; j < n; ++j) db[j] += row[j];
        }
      }
    });
  }

  /// x ⊙ c for a constant tensor c.
  NodeId mul_const(NodeId x, const Tensor<T>& c) {
    check_shape(x, c, "mul_const");
    Tensor<T> out = value(x);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
    auto ccopy = std::make_shared<Tensor<T>>(c);
    return make_op(std::move(out), {x}, [x, ccopy](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * (*ccopy)[i];
    });
  }

  /// x + c for a constant tensor c (noise injection path).
  NodeId add_const(NodeId x, const Tensor<T>& c) {
    check_shape(x, c, "add_const");
    Tensor<T> out = value(x);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c[i];
    return make_op(std::move(out), {x}, [x](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
      throw std::invalid_argument("matmul: shape mismatch");
    Tensor<T> out({va.dim(0), vb.dim(1)});
    matmul_acc(va, vb, out);
    return make_op(std::move(out), {a, b}, [a, b](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      if (g.needs_grad(a)) matmul_a_bt_acc(dy, g.value(b), g.grad_buf(a));
      if (g.needs_grad(b)) matmul_at_b_acc(g.value(a), dy, g.grad_buf(b));
    });
  }

  NodeId linear(NodeId x, NodeId w, NodeId b) { return add_bias(matmul(x, w), b); }

  // ---- activations ----

  NodeId tanh_(NodeId x) {
    Tensor<T> out = value(x);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return make_op(std::move(out), {x}, [x](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& y = g.value(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int64_t i = 0; i < dy.numel(); ++i)
        dx[i] += dy[i] * (T(1) - y[i] * y[i]);
    });
  }

  NodeId sigmoid(NodeId x) {
    Tensor<T> out = value(x);
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = T(1) / (T(1) + std::exp(-out[i]));
    return make_op(std::move(out), {x}, [x](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& y = g.value(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int64_t i = 0; i < dy.numel(); ++i)
        dx[i] += dy[i] * y[i] * (T(1) - y[i]);
    });
  }

  NodeId gelu(NodeId x) {
    // tanh approximation; smooth everywhere, which keeps finite-difference
    // checks clean
    Tensor<T> out = value(x);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = gelu_fwd(out[i]);
    return make_op(std::move(out), {x}, [x](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& vx = g.value(x);
      Tensor<T>& dx = g.grad_buf(x);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * gelu_bwd(vx[i]);
    });
  }

  // ---- normalization / softmax ----

  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, T eps = T(1e-5)) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("layer_norm: rank-2 input");
    const int m = vx.dim(0), n = vx.dim(1);
    const Tensor<T>& vg = value(gain);
    const Tensor<T>& vb = value(bias);
    if (vg.numel() != n || vb.numel() != n)
      throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
    if (eps <= T(0)) throw std::invalid_argument("layer_norm: eps must be > 0");

    auto aux = std::make_shared<LnAux>();
    aux->xhat = Tensor<T>({m, n});
    aux->inv_std.assign(static_cast<size_t>(m), T(0));
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
      const T* row = vx.row(i);
      T mean = T(0);
      for (int j = 0; j < n; ++j) mean += row[j];
      mean /= static_cast<T>(n);
      T var = T(0);
      for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + eps);
      aux->inv_std[static_cast<size_t>(i)] = inv;
      for (int j = 0; j < n; ++j) {
        const T xh = (row[j] - mean) * inv;
        aux->xhat.at(i, j) = xh;
        out.at(i, j) = xh * vg[j] + vb[j];
      }
    }
    return make_op(std::move(out), {x, gain, bias},
                   [x, gain, bias, m, n, aux](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& vg = g.value(gain);
      if (g.needs_grad(gain)) {
        Tensor<T>& dg = g.grad_buf(gain);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) dg[j] += dy.at(i, j) * aux->xhat.at(i, j);
      }
      if (g.needs_grad(bias)) {
        Tensor<T>& db = g.grad_buf(bias);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) db[j] += dy.at(i, j);
      }
      if (g.needs_grad(x)) {
        Tensor<T>& dx = g.grad_buf(x);
        for (int i = 0; i < m; ++i) {
          T mean_dyg = T(0), mean_dyg_xhat = T(0);
          for (int j = 0; j < n; ++j) {
            const T d = dy.at(i, j) * vg[j];
            mean_dyg += d;
            mean_dyg_xhat += d * aux->xhat.at(i, j);
          }
          mean_dyg /= static_cast<T>(n);
          mean_dyg_xhat /= static_cast<T>(n);
          const T inv = aux->inv_std[static_cast<size_t>(i)];
          for (int j = 0; j < n; ++j) {
            const T d = dy.at(i, j) * vg[j];
            dx.at(i, j) +=
                (d - mean_dyg - aux->xhat.at(i, j) * mean_dyg_xhat) * inv;
          }
        }
      }
    });
  }

  NodeId softmax_rows(NodeId x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2");
    Tensor<T> out = vx;
    const int m = vx.dim(0), n = vx.dim(1);
    for (int i = 0; i < m; ++i) softmax_inplace(out.row(i), n);
    return make_op(std::move(out), {x}, [x, m, n](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& p = g.value(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int i = 0; i < m; ++i) {
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += dy.at(i, j) * p.at(i, j);
        for (int j = 0; j < n; ++j)
          dx.at(i, j) += p.at(i, j) * (dy.at(i, j) - dot);
      }
    });
  }

  // ---- gather / reshape ----

  NodeId embedding_rows(NodeId table, const std::vector<int>& ids) {
    const Tensor<T>& vt = value(table);
    if (vt.rank() != 2) throw std::invalid_argument("embedding_rows: rank-2");
    const int d = vt.dim(1);
    Tensor<T> out({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= vt.dim(0))
        throw std::out_of_range("embedding_rows: id out of range");
      const T* src = vt.row(ids[i]);
      T* dst = out.row(static_cast<int>(i));
      for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return make_op(std::move(out), {table},
                   [table, ids_copy, d](Graph& g, NodeId self) {
      if (!g.needs_grad(table)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dt = g.grad_buf(table);
      for (size_t i = 0; i < ids_copy->size(); ++i) {
        const T* src = dy.row(static_cast<int>(i));
        T* dst = dt.row((*ids_copy)[i]);
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }

  NodeId slice_rows(NodeId x, int start, int len) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2 || start < 0 || len < 0 || start + len > vx.dim(0))
      throw std::invalid_argument("slice_rows: bad range");
    const int n = vx.dim(1);
    Tensor<T> out({len, n});
    for (int i = 0; i < len; ++i) {
      const T* src = vx.row(start + i);
      T* dst = out.row(i);
      for (int j = 0; j < n; ++j) dst[j] = src[j];
    }
    return make_op(std::move(out), {x}, [x, start, len, n](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int i = 0; i < len; ++i) {
        const T* src = dy.row(i);
        T* dst = dx.row(start + i);
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }

  NodeId concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const int n = value(parts[0]).dim(1);
    int rows = 0;
    for (NodeId p : parts) {
      if (value(p).rank() != 2 || value(p).dim(1) != n)
        throw std::invalid_argument("concat_rows: column mismatch");
      rows += value(p).dim(0);
    }
    Tensor<T> out({rows, n});
    int at = 0;
    for (NodeId p : parts) {
      const Tensor<T>& vp = value(p);
      for (int i = 0; i < vp.dim(0); ++i) {
        const T* src = vp.row(i);
        T* dst = out.row(at++);
        for (int j = 0; j < n; ++j) dst[j] = src[j];
      }
    }
    auto parts_copy = std::make_shared<std::vector<NodeId>>(parts);
    return make_op(std::move(out), parts,
                   [parts_copy, n](Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      int at = 0;
      for (NodeId p : *parts_copy) {
        const int rows = g.value(p).dim(0);
        if (g.needs_grad(p)) {
          Tensor<T>& dp = g.grad_buf(p);
          for (int i = 0; i < rows; ++i) {
            const T* src = dy.row(at + i);
            T* dst = dp.row(i);
            for (int j = 0; j < n; ++j) dst[j] += src[j];
          }
        }
        at += rows;
      }
    });
  }

  /// Same data, new shape (row-major).
  NodeId reshape(NodeId x, std::vector<int> shape) {
    const Tensor<T>& vx = value(x);
    if (Tensor<T>::numel_of(shape) != vx.numel())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor<T> out = vx;
    std::vector<T> data(vx.data(), vx.data() + vx.numel());
    out = Tensor<T>::from(std::move(shape), std::move(data));
    return make_op(std::move(out), {x}, [x](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
  }

  /// Column means over rows: [m,n] -> [1,n].
  NodeId mean_rows(NodeId x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2 || vx.dim(0) < 1)
      throw std::invalid_argument("mean_rows: need at least one row");
    const int m = vx.dim(0), n = vx.dim(1);
    Tensor<T> out({1, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[j] += vx.at(i, j);
    for (int j = 0; j < n; ++j) out[j] /= static_cast<T>(m);
    return make_op(std::move(out), {x}, [x, m, n](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad_buf(x);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dx.at(i, j) += dy[j] / static_cast<T>(m);
    });
  }

  NodeId sum_all(NodeId x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out({1});
    for (int64_t i = 0; i < vx.numel(); ++i) out[0] += vx[i];
    return make_op(std::move(out), {x}, [x](Graph& g, NodeId self) {
      if (!g.needs_grad(x)) return;
      const T dy = g.grad(self)[0];
      Tensor<T>& dx = g.grad_buf(x);
      for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy;
    });
  }

  // ---- attention ----

  struct AttnWeights {
    NodeId wq, bq, wk, bk, wv, bv, wo, bo;
  };

  /// Multi-head scaled-dot attention. Cross-attention when kv != q input;
  /// the causal mask is only meaningful for self-attention (Lq == Lkv).
  NodeId attention(NodeId q_in, NodeId kv_in, const AttnWeights& w,
                   int n_heads, bool causal) {
    const Tensor<T>& vq = value(q_in);
    const Tensor<T>& vkv = value(kv_in);
    if (vq.rank() != 2 || vkv.rank() != 2 || vq.dim(1) != vkv.dim(1))
      throw std::invalid_argument("attention: shape mismatch");
    const int d = vq.dim(1);
    if (d % n_heads != 0)
      throw std::invalid_argument("attention: d_model not divisible by heads");
    if (causal && vq.dim(0) != vkv.dim(0))
      throw std::invalid_argument("attention: causal mask needs Lq == Lkv");

    NodeId q = linear(q_in, w.wq, w.bq);
    NodeId k = linear(kv_in, w.wk, w.bk);
    NodeId v = linear(kv_in, w.wv, w.bv);
    NodeId mixed = attention_core(q, k, v, n_heads, causal);
    return linear(mixed, w.wo, w.bo);
  }

  /// softmax(Q Kᵀ / sqrt(dh)) V per head, on already-projected inputs.
  NodeId attention_core(NodeId q, NodeId k, NodeId v, int n_heads, bool causal) {
    const Tensor<T>& vq = value(q);
    const Tensor<T>& vk = value(k);
    const Tensor<T>& vv = value(v);
    const int lq = vq.dim(0), lkv = vk.dim(0), d = vq.dim(1);
    const int dh = d / n_heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    auto probs = std::make_shared<Tensor<T>>(Tensor<T>({n_heads, lq, lkv}));
    Tensor<T> out({lq, d});
    std::vector<T> scores(static_cast<size_t>(lkv));
    for (int h = 0; h < n_heads; ++h) {
      const int c0 = h * dh;
      for (int i = 0; i < lq; ++i) {
        const int jmax = causal ? i + 1 : lkv;
        for (int j = 0; j < jmax; ++j) {
          T acc = T(0);
          const T* qrow = vq.row(i) + c0;
          const T* krow = vk.row(j) + c0;
          for (int c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
          scores[static_cast<size_t>(j)] = acc * inv_sqrt;
        }
        softmax_inplace(scores.data(), jmax);
        for (int j = 0; j < jmax; ++j)
          probs->at(h, i, j) = scores[static_cast<size_t>(j)];
        for (int j = jmax; j < lkv; ++j) probs->at(h, i, j) = T(0);
        T* orow = out.row(i) + c0;
        for (int j = 0; j < jmax; ++j) {
          const T p = probs->at(h, i, j);
          const T* vrow = vv.row(j) + c0;
          for (int c = 0; c < dh; ++c) orow[c] += p * vrow[c];
        }
      }
    }
    return make_op(std::move(out), {q, k, v},
                   [q, k, v, n_heads, lq, lkv, dh, inv_sqrt, probs](
                       Graph& g, NodeId self) {
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& vq = g.value(q);
      const Tensor<T>& vk = g.value(k);
      const Tensor<T>& vv = g.value(v);
      const bool nq = g.needs_grad(q), nk = g.needs_grad(k), nv = g.needs_grad(v);
      if (!nq && !nk && !nv) return;
      Tensor<T>* dq = nq ? &g.grad_buf(q) : nullptr;
      Tensor<T>* dk = nk ? &g.grad_buf(k) : nullptr;
      Tensor<T>* dv = nv ? &g.grad_buf(v) : nullptr;
      std::vector<T> dprow(static_cast<size_t>(lkv));
      for (int h = 0; h < n_heads; ++h) {
        const int c0 = h * dh;
        for (int i = 0; i < lq; ++i) {
          const T* dyrow = dy.row(i) + c0;
          // dP = dOh Vhᵀ ; dVh += P dOh
          T dot = T(0);
          for (int j = 0; j < lkv; ++j) {
            const T p = probs->at(h, i, j);
            T acc = T(0);
            const T* vrow = vv.row(j) + c0;
            for (int c = 0; c < dh; ++c) acc += dyrow[c] * vrow[c];
            dprow[static_cast<size_t>(j)] = acc;
            dot += acc * p;
            if (nv && p != T(0)) {
              T* dvrow = dv->row(j) + c0;
              for (int c = 0; c < dh; ++c) dvrow[c] += p * dyrow[c];
            }
          }
          // dS = P ⊙ (dP - <dP,P>) ; dQ += dS K ; dK += dSᵀ Q
          for (int j = 0; j < lkv; ++j) {
            const T p = probs->at(h, i, j);
            if (p == T(0)) continue;
            const T ds = p * (dprow[static_cast<size_t>(j)] - dot) * inv_sqrt;
            if (nq) {
              T* dqrow = dq->row(i) + c0;
              const T* krow = vk.row(j) + c0;
              for (int c = 0; c < dh; ++c) dqrow[c] += ds * krow[c];
            }
            if (nk) {
              T* dkrow = dk->row(j) + c0;
              const T* qrow = vq.row(i) + c0;
              for (int c = 0; c < dh; ++c) dkrow[c] += ds * qrow[c];
            }
          }
        }
      }
    });
  }

  // ---- stochastic bridge ----

  /// Gumbel-Softmax over rows. Soft mode returns the tempered softmax of
  /// perturbed logits; hard mode returns exact one-hots at the perturbed
  /// argmax while routing gradients through the soft distribution
  /// (straight-through).
  NodeId gumbel_softmax(NodeId logits, double tau, bool hard, SplitRng& rng) {
    if (tau <= 0) throw std::invalid_argument("gumbel_softmax: tau must be > 0");
    const Tensor<T>& vx = value(logits);
    if (vx.rank() != 2) throw std::invalid_argument("gumbel_softmax: rank-2");
    const int m = vx.dim(0), n = vx.dim(1);
    auto soft = std::make_shared<Tensor<T>>(Tensor<T>({m, n}));
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
      T* srow = soft->row(i);
      const T* xrow = vx.row(i);
      int argmax = 0;
      T best = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < n; ++j) {
        const T z = xrow[j] + static_cast<T>(rng.gumbel());
        srow[j] = z / static_cast<T>(tau);
        if (z > best) {
          best = z;
          argmax = j;
        }
      }
      softmax_inplace(srow, n);
      T* orow = out.row(i);
      if (hard) {
        orow[argmax] = T(1);
      } else {
        for (int j = 0; j < n; ++j) orow[j] = srow[j];
      }
    }
    return make_op(std::move(out), {logits},
                   [logits, m, n, tau, soft](Graph& g, NodeId self) {
      if (!g.needs_grad(logits)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad_buf(logits);
      const T inv_tau = T(1) / static_cast<T>(tau);
      for (int i = 0; i < m; ++i) {
        const T* p = soft->row(i);
        const T* dyr = dy.row(i);
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += dyr[j] * p[j];
        T* dxr = dx.row(i);
        for (int j = 0; j < n; ++j) dxr[j] += p[j] * (dyr[j] - dot) * inv_tau;
      }
    });
  }

  // ---- losses ----

  /// Mean negative log-likelihood of targets under row softmax; rows whose
  /// target equals ignore_id are excluded from the mean.
  NodeId cross_entropy(NodeId logits, const std::vector<int>& targets,
                       int ignore_id = -1) {
    const Tensor<T>& vx = value(logits);
    if (vx.rank() != 2 || static_cast<int>(targets.size()) != vx.dim(0))
      throw std::invalid_argument("cross_entropy: target count mismatch");
    const int m = vx.dim(0), n = vx.dim(1);
    for (int t : targets)
      if (t != ignore_id && (t < 0 || t >= n))
        throw std::out_of_range("cross_entropy: target id out of range");
    auto probs = std::make_shared<Tensor<T>>(Tensor<T>({m, n}));
    auto tgt = std::make_shared<std::vector<int>>(targets);
    int used = 0;
    T total = T(0);
    for (int i = 0; i < m; ++i) {
      const int t = targets[static_cast<size_t>(i)];
      T* prow = probs->row(i);
      const T* xrow = vx.row(i);
      for (int j = 0; j < n; ++j) prow[j] = xrow[j];
      if (t == ignore_id) continue;
      softmax_inplace(prow, n);
      total -= std::log(std::max(prow[t], std::numeric_limits<T>::min()));
      ++used;
    }
    if (used == 0) throw std::invalid_argument("cross_entropy: no valid targets");
    Tensor<T> out({1});
    out[0] = total / static_cast<T>(used);
    return make_op(std::move(out), {logits},
                   [logits, m, n, used, ignore_id, probs, tgt](Graph& g,
                                                               NodeId self) {
      if (!g.needs_grad(logits)) return;
      const T dy = g.grad(self)[0] / static_cast<T>(used);
      Tensor<T>& dx = g.grad_buf(logits);
      for (int i = 0; i < m; ++i) {
        const int t = (*tgt)[static_cast<size_t>(i)];
        if (t == ignore_id) continue;
        const T* prow = probs->row(i);
        T* dxr = dx.row(i);
        for (int j = 0; j < n; ++j) dxr[j] += dy * prow[j];
        dxr[t] -= dy;
      }
    });
  }

  /// Language-model loss: logits rows 0..L-2 scored against tokens 1..L-1,
  /// PAD targets excluded.
  NodeId cross_entropy_shifted(NodeId logits, const std::vector<int>& tokens,
                               int pad_id) {
    const Tensor<T>& vx = value(logits);
    if (vx.dim(0) != static_cast<int>(tokens.size()))
      throw std::invalid_argument("cross_entropy_shifted: length mismatch");
    if (tokens.size() < 2)
      throw std::invalid_argument("cross_entropy_shifted: need >= 2 tokens");
    NodeId head = slice_rows(logits, 0, static_cast<int>(tokens.size()) - 1);
    std::vector<int> shifted(tokens.begin() + 1, tokens.end());
    return cross_entropy(head, shifted, pad_id);
  }

  /// Numerically stable binary cross entropy on logits, mean over elements.
  NodeId bce_with_logits(NodeId z, const Tensor<T>& targets) {
    const Tensor<T>& vz = value(z);
    check_shape(z, targets, "bce_with_logits");
    const int64_t n = vz.numel();
    T total = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const T zv = vz[i];
      const T t = targets[i];
      total += std::max(zv, T(0)) - zv * t + std::log1p(std::exp(-std::abs(zv)));
    }
    Tensor<T> out({1});
    out[0] = total / static_cast<T>(n);
    auto tcopy = std::make_shared<Tensor<T>>(targets);
    return make_op(std::move(out), {z}, [z, n, tcopy](Graph& g, NodeId self) {
      if (!g.needs_grad(z)) return;
      const T dy = g.grad(self)[0] / static_cast<T>(n);
      const Tensor<T>& vz = g.value(z);
      Tensor<T>& dz = g.grad_buf(z);
      for (int64_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-vz[i]));
        dz[i] += dy * (s - (*tcopy)[i]);
      }
    });
  }

  /// BCE on probabilities already in (0,1), mean over elements.
  NodeId binary_cross_entropy(NodeId probs, const Tensor<T>& targets) {
    const Tensor<T>& vp = value(probs);
    check_shape(probs, targets, "binary_cross_entropy");
    const int64_t n = vp.numel();
    const T lo = T(1e-12), hi = T(1) - T(1e-12);
    T total = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const T p = std::min(std::max(vp[i], lo), hi);
      const T t = targets[i];
      total += -(t * std::log(p) + (T(1) - t) * std::log(T(1) - p));
    }
    Tensor<T> out({1});
    out[0] = total / static_cast<T>(n);
    auto tcopy = std::make_shared<Tensor<T>>(targets);
    return make_op(std::move(out), {probs}, [probs, n, lo, hi, tcopy](
                                                Graph& g, NodeId self) {
      if (!g.needs_grad(probs)) return;
      const T dy = g.grad(self)[0] / static_cast<T>(n);
      const Tensor<T>& vp = g.value(probs);
      Tensor<T>& dp = g.grad_buf(probs);
      for (int64_t i = 0; i < n; ++i) {
        const T p = std::min(std::max(vp[i], lo), hi);
        dp[i] += dy * (p - (*tcopy)[i]) / (p * (T(1) - p));
      }
    });
  }

  // ---- backward ----

  void backward(NodeId root, T seed = T(1)) {
    if (value(root).numel() != 1)
      throw std::logic_error("backward: root must be scalar");
    grad_buf(root)[0] += seed;
    for (NodeId id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad || n.grad.empty() || !n.back) continue;
      n.back(*this, id);
    }
  }

  /// Adds node-local parameter gradients into the shared accumulators.
  /// Call from one thread at a time.
  void flush_param_grads(T scale = T(1)) {
    for (auto& [p, id] : params_) {
      if (!p->trainable) continue;
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      if (g.empty()) continue;
      for (int64_t i = 0; i < g.numel(); ++i) p->grad[i] += scale * g[i];
    }
  }

  Tensor<T>& grad_buf(NodeId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) {
      const Tensor<T>& v = n.external ? *n.external : n.owned;
      n.grad = Tensor<T>::zeros(v.shape());
    }
    return n.grad;
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&, NodeId)> back;
  };

  struct LnAux {
    Tensor<T> xhat;
    std::vector<T> inv_std;
  };

  NodeId make_leaf(Tensor<T> v, bool needs_grad) {
    Node n;
    n.owned = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  NodeId make_op(Tensor<T> v, const std::vector<NodeId>& parents,
                 std::function<void(Graph&, NodeId)> back) {
    Node n;
    n.owned = std::move(v);
    for (NodeId p : parents)
      if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  void check_same_shape(NodeId a, NodeId b, const char* what) const {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }

  void check_shape(NodeId a, const Tensor<T>& t, const char* what) const {
    if (!value(a).same_shape(t))
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }

  static void softmax_inplace(T* row, int n) {
    T best = row[0];
    for (int j = 1; j < n; ++j) best = std::max(best, row[j]);
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - best);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) row[j] *= inv;
  }

  static T gelu_fwd(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T a = T(0.044715);
    return T(0.5) * x * (T(1) + std::tanh(c * (x + a * x * x * x)));
  }

  static T gelu_bwd(T x) {
    const T c = T(0.7978845608028654);
    const T a = T(0.044715);
    const T u = c * (x + a * x * x * x);
    const T th = std::tanh(u);
    return T(0.5) * (T(1) + th) +
           T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * a * x * x);
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter<T>*, NodeId>> params_;
  std::unordered_map<const Parameter<T>*, NodeId> param_ids_;
};

/// Exact one-hot rows for token ids (the true-token bridge used in tests).
template <typename T>
Tensor<T> one_hot_rows(const std::vector<int>& ids, int vocab_size) {
  Tensor<T> out({static_cast<int>(ids.size()), vocab_size});
  for (size_t i = 0; i < ids.size(); ++i) out.at(static_cast<int>(i), ids[i]) = T(1);
  return out;
}

}  // namespace cmwm
