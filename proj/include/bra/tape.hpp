#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "bra/tensor_ops.hpp"

namespace bra {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::int32_t id = -1;
};

/// Recorded computation graph for reverse-mode differentiation.
///
/// Nodes are stored in evaluation order, so the list is topologically sorted
/// by construction; backward walks it once in reverse, accumulating
/// vector-Jacobian products into per-node gradient buffers. Single-threaded
/// per evaluation.
template <typename T>
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const Tensor<T>& out_value, std::span<const std::int32_t> inputs,
                         const Tensor<T>& gout)>;

  Var<T> leaf(Tensor<T> v) { return push("leaf", std::move(v), {}, nullptr); }

  Var<T> push(const char* op, Tensor<T> value, std::vector<std::int32_t> inputs, BackwardFn fn) {
    nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(fn)});
    return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Seed d(loss)/d(loss) = 1 and propagate to every node. loss must be a
  /// shape-[1] tensor on this tape.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw argument_error("backward: loss is not on this tape");
    if (value(loss).size() != 1) {
      throw argument_error("backward: loss must be scalar, got shape " +
                           shape_str(value(loss).shape()));
    }
    grads_.assign(nodes_.size(), Tensor<T>{});
    grad_ref(loss.id)[0] = T(1);
    for (std::int32_t i = loss.id; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || grads_[static_cast<std::size_t>(i)].empty()) continue;
      n.backward(*this, n.value, std::span<const std::int32_t>(n.inputs),
                 grads_[static_cast<std::size_t>(i)]);
    }
  }

  /// Gradient of the last backward() loss w.r.t. v; zeros if v was unused.
  const Tensor<T>& grad(Var<T> v) {
    return grad_ref(v.id);
  }

  Tensor<T>& grad_ref(std::int32_t id) {
    if (grads_.size() != nodes_.size()) grads_.assign(nodes_.size(), Tensor<T>{});
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor<T>(nodes_[static_cast<std::size_t>(id)].value.shape());
    return g;
  }

 private:
  struct Node {
    const char* op;
    Tensor<T> value;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

namespace detail {

template <typename T>
Tape<T>* same_tape(std::initializer_list<Var<T>> vs) {
  Tape<T>* t = nullptr;
  for (auto v : vs) {
    if (!v.tape) throw argument_error("op on a detached var");
    if (t && v.tape != t) throw argument_error("op mixes vars from different tapes");
    t = v.tape;
  }
  return t;
}

}  // namespace detail

// --- generic helpers ---------------------------------------------------
//
// The forward pipelines (attention, bra, model) are written once against a
// value type V that is either Tensor<T> (eager) or Var<T> (taped). value()
// reads the underlying tensor either way; lift() injects a constant as a
// sibling of an existing V.

template <typename V>
struct value_traits;
template <typename T>
struct value_traits<Tensor<T>> {
  using scalar = T;
  static constexpr bool taped = false;
};
template <typename T>
struct value_traits<Var<T>> {
  using scalar = T;
  static constexpr bool taped = true;
};
template <typename V>
using scalar_t = typename value_traits<std::decay_t<V>>::scalar;

template <typename T>
inline const Tensor<T>& value(const Tensor<T>& t) {
  return t;
}
template <typename T>
inline const Tensor<T>& value(Var<T> v) {
  return v.tape->value(v);
}

template <typename T>
inline Tensor<T> lift(Tensor<T> t, const Tensor<T>&) {
  return t;
}
template <typename T>
inline Var<T> lift(Tensor<T> t, Var<T> like) {
  return like.tape->leaf(std::move(t));
}

// --- taped op overloads -------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>* t = detail::same_tape<T>({a, b});
  return t->push("add", add(value(a), value(b)), {a.id, b.id},
                 [](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in,
                    const Tensor<T>& g) {
                   auto& ga = tp.grad_ref(in[0]);
                   auto& gb = tp.grad_ref(in[1]);
                   for (std::int64_t i = 0; i < g.size(); ++i) {
                     ga[i] += g[i];
                     gb[i] += g[i];
                   }
                 });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  return x.tape->push("scale", scale(value(x), s), {x.id},
                      [s](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in,
                          const Tensor<T>& g) {
                        auto& gx = tp.grad_ref(in[0]);
                        for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
                      });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  Tape<T>* t = detail::same_tape<T>({x, b});
  return t->push("add_bias", add_bias(value(x), value(b)), {x.id, b.id},
                 [](Tape<T>& tp, const Tensor<T>& out, std::span<const std::int32_t> in,
                    const Tensor<T>& g) {
                   auto& gx = tp.grad_ref(in[0]);
                   auto& gb = tp.grad_ref(in[1]);
                   const std::int64_t c = out.extent(out.rank() - 1);
                   const std::int64_t rows = g.size() / c;
                   for (std::int64_t r = 0; r < rows; ++r)
                     for (std::int64_t i = 0; i < c; ++i) {
                       gx[r * c + i] += g[r * c + i];
                       gb[i] += g[r * c + i];
                     }
                 });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>* t = detail::same_tape<T>({a, b});
  return t->push(
      "matmul", matmul(value(a), value(b)), {a.id, b.id},
      [](Tape<T>& tp, const Tensor<T>& out, std::span<const std::int32_t> in, const Tensor<T>& g) {
        const Tensor<T>& av = tp.value(Var<T>{&tp, in[0]});
        const Tensor<T>& bv = tp.value(Var<T>{&tp, in[1]});
        auto& ga = tp.grad_ref(in[0]);
        auto& gb = tp.grad_ref(in[1]);
        const std::int64_t m = av.extent(av.rank() - 2);
        const std::int64_t p = av.extent(av.rank() - 1);
        const std::int64_t n = bv.extent(bv.rank() - 1);
        const std::int64_t batch = out.size() / (m * n);
        for (std::int64_t i = 0; i < batch; ++i) {
          auto am = map_matrix(av, m, p, i * m * p);
          auto bm = map_matrix(bv, p, n, i * p * n);
          auto gm = map_matrix(g, m, n, i * m * n);
          map_matrix(ga, m, p, i * m * p).noalias() += gm * bm.transpose();
          map_matrix(gb, p, n, i * p * n).noalias() += am.transpose() * gm;
        }
      });
}

template <typename T>
Var<T> transpose_last2(Var<T> x) {
  return x.tape->push("transpose_last2", transpose_last2(value(x)), {x.id},
                      [](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in,
                         const Tensor<T>& g) {
                        Tensor<T> gt = transpose_last2(g);
                        auto& gx = tp.grad_ref(in[0]);
                        for (std::int64_t i = 0; i < gt.size(); ++i) gx[i] += gt[i];
                      });
}

template <typename T>
Var<T> softmax_lastaxis(Var<T> x) {
  return x.tape->push(
      "softmax_lastaxis", softmax_lastaxis(value(x)), {x.id},
      [](Tape<T>& tp, const Tensor<T>& y, std::span<const std::int32_t> in, const Tensor<T>& g) {
        auto& gx = tp.grad_ref(in[0]);
        const std::int64_t n = y.extent(y.rank() - 1);
        const std::int64_t rows = y.size() / n;
        for (std::int64_t r = 0; r < rows; ++r) {
          T dot = T(0);
          for (std::int64_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
          for (std::int64_t i = 0; i < n; ++i)
            gx[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
        }
      });
}

template <typename T>
Var<T> mean_axis(Var<T> x, std::int64_t axis) {
  const Tensor<T>& xv = value(x);
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= xv.extent(d);
  for (std::int64_t d = axis + 1; d < xv.rank(); ++d) inner *= xv.extent(d);
  const std::int64_t n = xv.extent(axis);
  return x.tape->push("mean_axis", mean_axis(xv, axis), {x.id},
                      [outer, inner, n](Tape<T>& tp, const Tensor<T>&,
                                        std::span<const std::int32_t> in, const Tensor<T>& g) {
                        auto& gx = tp.grad_ref(in[0]);
                        const T inv = T(1) / static_cast<T>(n);
                        for (std::int64_t o = 0; o < outer; ++o)
                          for (std::int64_t a = 0; a < n; ++a)
                            for (std::int64_t i = 0; i < inner; ++i)
                              gx[(o * n + a) * inner + i] += g[o * inner + i] * inv;
                      });
}

/// Backward is scatter-add into the gathered positions; duplicated indices
/// accumulate.
template <typename T>
Var<T> gather_axis0(Var<T> x, const IndexTensor& idx) {
  return x.tape->push("gather_axis0", gather_axis0(value(x), idx), {x.id},
                      [idx](Tape<T>& tp, const Tensor<T>& out, std::span<const std::int32_t> in,
                            const Tensor<T>& g) {
                        auto& gx = tp.grad_ref(in[0]);
                        const std::int64_t rows = idx.extent(0), k = idx.extent(1);
                        const std::int64_t block = out.extent(2) * out.extent(3);
                        for (std::int64_t i = 0; i < rows; ++i)
                          for (std::int64_t j = 0; j < k; ++j) {
                            const T* src = g.data() + (i * k + j) * block;
                            T* dst = gx.data() + idx(i, j) * block;
                            for (std::int64_t e = 0; e < block; ++e) dst[e] += src[e];
                          }
                      });
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> kernel) {
  Tape<T>* t = detail::same_tape<T>({x, kernel});
  return t->push(
      "depthwise_conv2d", depthwise_conv2d(value(x), value(kernel)), {x.id, kernel.id},
      [](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(Var<T>{&tp, in[0]});
        const Tensor<T>& kv = tp.value(Var<T>{&tp, in[1]});
        auto& gx = tp.grad_ref(in[0]);
        auto& gk = tp.grad_ref(in[1]);
        const std::int64_t h = xv.extent(0), w = xv.extent(1), c = xv.extent(2);
        const std::int64_t s = kv.extent(0), pad = (s - 1) / 2;
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t xx = 0; xx < w; ++xx)
            for (std::int64_t ky = 0; ky < s; ++ky) {
              const std::int64_t sy = y + ky - pad;
              if (sy < 0 || sy >= h) continue;
              for (std::int64_t kx = 0; kx < s; ++kx) {
                const std::int64_t sx = xx + kx - pad;
                if (sx < 0 || sx >= w) continue;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                  gx(sy, sx, ch) += g(y, xx, ch) * kv(ky, kx, ch);
                  gk(ky, kx, ch) += g(y, xx, ch) * xv(sy, sx, ch);
                }
              }
            }
      });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::int64_t stride, std::int64_t pad) {
  Tape<T>* t = detail::same_tape<T>({x, kernel});
  return t->push(
      "conv2d", conv2d(value(x), value(kernel), stride, pad), {x.id, kernel.id},
      [stride, pad](Tape<T>& tp, const Tensor<T>& out, std::span<const std::int32_t> in,
                    const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(Var<T>{&tp, in[0]});
        const Tensor<T>& kv = tp.value(Var<T>{&tp, in[1]});
        auto& gx = tp.grad_ref(in[0]);
        auto& gk = tp.grad_ref(in[1]);
        const std::int64_t h = xv.extent(0), w = xv.extent(1), cin = xv.extent(2);
        const std::int64_t s = kv.extent(0), cout = kv.extent(3);
        const std::int64_t ho = out.extent(0), wo = out.extent(1);
        Tensor<T> col = detail::im2col(xv, s, stride, pad, ho, wo);
        auto gm = map_matrix(g, ho * wo, cout);
        map_matrix(gk, s * s * cin, cout).noalias() +=
            map_matrix(col, ho * wo, s * s * cin).transpose() * gm;
        Tensor<T> gcol({ho * wo, s * s * cin});
        map_matrix(gcol, ho * wo, s * s * cin).noalias() =
            gm * map_matrix(kv, s * s * cin, cout).transpose();
        for (std::int64_t oy = 0; oy < ho; ++oy)
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const T* row = gcol.data() + (oy * wo + ox) * s * s * cin;
            for (std::int64_t ky = 0; ky < s; ++ky) {
              const std::int64_t sy = oy * stride + ky - pad;
              if (sy < 0 || sy >= h) continue;
              for (std::int64_t kx = 0; kx < s; ++kx) {
                const std::int64_t sx = ox * stride + kx - pad;
                if (sx < 0 || sx >= w) continue;
                T* dst = gx.data() + (sy * w + sx) * cin;
                const T* src = row + (ky * s + kx) * cin;
                for (std::int64_t ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
              }
            }
          }
      });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  Tape<T>* t = detail::same_tape<T>({x, gain, bias});
  return t->push(
      "layer_norm", layer_norm(value(x), value(gain), value(bias), eps), {x.id, gain.id, bias.id},
      [eps](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(Var<T>{&tp, in[0]});
        const Tensor<T>& gv = tp.value(Var<T>{&tp, in[1]});
        auto& gx = tp.grad_ref(in[0]);
        auto& ggain = tp.grad_ref(in[1]);
        auto& gbias = tp.grad_ref(in[2]);
        const std::int64_t c = xv.extent(xv.rank() - 1);
        const std::int64_t rows = xv.size() / c;
        std::vector<T> xhat(static_cast<std::size_t>(c));
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* src = xv.data() + r * c;
          const T* go = g.data() + r * c;
          T mean = T(0);
          for (std::int64_t i = 0; i < c; ++i) mean += src[i];
          mean /= static_cast<T>(c);
          T var = T(0);
          for (std::int64_t i = 0; i < c; ++i) var += (src[i] - mean) * (src[i] - mean);
          var /= static_cast<T>(c);
          const T inv = T(1) / std::sqrt(var + eps);
          T gh_mean = T(0), ghx_mean = T(0);
          for (std::int64_t i = 0; i < c; ++i) {
            xhat[static_cast<std::size_t>(i)] = (src[i] - mean) * inv;
            const T gh = go[i] * gv[i];
            gh_mean += gh;
            ghx_mean += gh * xhat[static_cast<std::size_t>(i)];
          }
          gh_mean /= static_cast<T>(c);
          ghx_mean /= static_cast<T>(c);
          for (std::int64_t i = 0; i < c; ++i) {
            const T gh = go[i] * gv[i];
            gx[r * c + i] += inv * (gh - gh_mean - xhat[static_cast<std::size_t>(i)] * ghx_mean);
            ggain[i] += go[i] * xhat[static_cast<std::size_t>(i)];
            gbias[i] += go[i];
          }
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  return x.tape->push(
      "gelu", gelu(value(x)), {x.id},
      [](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(Var<T>{&tp, in[0]});
        auto& gx = tp.grad_ref(in[0]);
        const T inv_sqrt2 = T(0.7071067811865475244L);
        const T inv_sqrt2pi = T(0.3989422804014326779L);
        for (std::int64_t i = 0; i < xv.size(); ++i) {
          const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
          gx[i] += g[i] * (cdf + xv[i] * pdf);
        }
      });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  return x.tape->push("sum_all", sum_all(value(x)), {x.id},
                      [](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in,
                         const Tensor<T>& g) {
                        auto& gx = tp.grad_ref(in[0]);
                        for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                      });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->push("reshape", reshape(value(x), std::move(shape)), {x.id},
                      [](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in,
                         const Tensor<T>& g) {
                        auto& gx = tp.grad_ref(in[0]);
                        for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      });
}

template <typename T>
Var<T> slice_last(Var<T> x, std::int64_t start, std::int64_t len) {
  const std::int64_t c = value(x).extent(value(x).rank() - 1);
  return x.tape->push("slice_last", slice_last(value(x), start, len), {x.id},
                      [start, len, c](Tape<T>& tp, const Tensor<T>&,
                                      std::span<const std::int32_t> in, const Tensor<T>& g) {
                        auto& gx = tp.grad_ref(in[0]);
                        const std::int64_t rows = g.size() / len;
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t i = 0; i < len; ++i)
                            gx[r * c + start + i] += g[r * len + i];
                      });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw argument_error("concat_last: no parts");
  Tape<T>* t = parts[0].tape;
  std::vector<Tensor<T>> vals;
  std::vector<std::int32_t> ids;
  std::vector<std::int64_t> widths;
  vals.reserve(parts.size());
  for (auto p : parts) {
    if (p.tape != t) throw argument_error("concat_last mixes vars from different tapes");
    vals.push_back(value(p));
    ids.push_back(p.id);
    widths.push_back(vals.back().extent(vals.back().rank() - 1));
  }
  return t->push("concat_last", concat_last<T>(vals), std::move(ids),
                 [widths](Tape<T>& tp, const Tensor<T>& out, std::span<const std::int32_t> in,
                          const Tensor<T>& g) {
                   const std::int64_t total = out.extent(out.rank() - 1);
                   const std::int64_t rows = out.size() / total;
                   std::int64_t off = 0;
                   for (std::size_t p = 0; p < in.size(); ++p) {
                     auto& gp = tp.grad_ref(in[p]);
                     const std::int64_t cw = widths[p];
                     for (std::int64_t r = 0; r < rows; ++r)
                       for (std::int64_t i = 0; i < cw; ++i)
                         gp[r * cw + i] += g[r * total + off + i];
                     off += cw;
                   }
                 });
}

template <typename T>
Var<T> to_regions(Var<T> x, std::int64_t bh, std::int64_t bw) {
  const std::int64_t h = value(x).extent(0), w = value(x).extent(1);
  return x.tape->push("to_regions", to_regions(value(x), bh, bw), {x.id},
                      [bh, bw, h, w](Tape<T>& tp, const Tensor<T>&,
                                     std::span<const std::int32_t> in, const Tensor<T>& g) {
                        Tensor<T> gmap = from_regions(g, bh, bw, h, w);
                        auto& gx = tp.grad_ref(in[0]);
                        for (std::int64_t i = 0; i < gmap.size(); ++i) gx[i] += gmap[i];
                      });
}

template <typename T>
Var<T> from_regions(Var<T> x, std::int64_t bh, std::int64_t bw, std::int64_t h, std::int64_t w) {
  return x.tape->push("from_regions", from_regions(value(x), bh, bw, h, w), {x.id},
                      [bh, bw](Tape<T>& tp, const Tensor<T>&, std::span<const std::int32_t> in,
                               const Tensor<T>& g) {
                        Tensor<T> gr = to_regions(g, bh, bw);
                        auto& gx = tp.grad_ref(in[0]);
                        for (std::int64_t i = 0; i < gr.size(); ++i) gx[i] += gr[i];
                      });
}

}  // namespace bra
