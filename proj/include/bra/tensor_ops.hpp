#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "bra/tensor.hpp"

namespace bra {

namespace detail {

inline void check_batch_dims(const Shape& a, const Shape& b, const char* op) {
  if (a.size() < 2 || b.size() < 2) {
    throw dimension_error(std::string(op) + ": operands must have rank >= 2, got " +
                          shape_str(a) + " and " + shape_str(b));
  }
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end() - 2, b.begin())) {
    throw dimension_error(std::string(op) + ": batch extents differ between " + shape_str(a) +
                          " and " + shape_str(b));
  }
}

inline std::int64_t leading_numel(const Shape& s, std::int64_t keep_last) {
  std::int64_t n = 1;
  for (std::size_t i = 0; i + keep_last < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace detail

/// Batched matrix product over the last two axes. Leading extents must match
/// exactly; no broadcasting.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_batch_dims(a.shape(), b.shape(), "matmul");
  const std::int64_t m = a.extent(a.rank() - 2);
  const std::int64_t p = a.extent(a.rank() - 1);
  const std::int64_t p2 = b.extent(b.rank() - 2);
  const std::int64_t n = b.extent(b.rank() - 1);
  if (p != p2) {
    throw dimension_error("matmul: inner extents differ between " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(std::move(out_shape));
  const std::int64_t batch = detail::leading_numel(a.shape(), 2);
  for (std::int64_t i = 0; i < batch; ++i) {
    auto ai = map_matrix(a, m, p, i * m * p);
    auto bi = map_matrix(b, p, n, i * p * n);
    auto oi = map_matrix(out, m, n, i * m * n);
    oi.noalias() = ai * bi;
  }
  return out;
}

/// Swap the last two axes.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw dimension_error("transpose_last2: rank must be >= 2");
  const std::int64_t m = x.extent(x.rank() - 2);
  const std::int64_t n = x.extent(x.rank() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor<T> out(std::move(out_shape));
  const std::int64_t batch = detail::leading_numel(x.shape(), 2);
  for (std::int64_t i = 0; i < batch; ++i) {
    const T* src = x.data() + i * m * n;
    T* dst = out.data() + i * m * n;
    for (std::int64_t r = 0; r < m; ++r)
      for (std::int64_t c = 0; c < n; ++c) dst[c * m + r] = src[r * n + c];
  }
  return out;
}

/// Row-stochastic softmax over the last axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax_lastaxis(const Tensor<T>& x) {
  const std::int64_t n = x.extent(x.rank() - 1);
  const std::int64_t rows = detail::leading_numel(x.shape(), 1);
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * n;
    T* dst = out.data() + r * n;
    T mx = src[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, src[i]);
    T sum = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    for (std::int64_t i = 0; i < n; ++i) dst[i] /= sum;
  }
  return out;
}

/// Arithmetic mean along one axis; the axis is dropped from the output shape.
/// A rank-1 input reduces to shape [1].
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::int64_t axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw dimension_error("mean_axis: axis " + std::to_string(axis) + " invalid for shape " +
                          shape_str(x.shape()));
  }
  Shape out_shape;
  for (std::int64_t d = 0; d < x.rank(); ++d)
    if (d != axis) out_shape.push_back(x.extent(d));
  if (out_shape.empty()) out_shape.push_back(1);
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.extent(d);
  for (std::int64_t d = axis + 1; d < x.rank(); ++d) inner *= x.extent(d);
  const std::int64_t n = x.extent(axis);
  Tensor<T> out(std::move(out_shape));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      T acc = T(0);
      for (std::int64_t a = 0; a < n; ++a) acc += x[(o * n + a) * inner + i];
      out[o * inner + i] = acc / static_cast<T>(n);
    }
  }
  return out;
}

/// Per-row indices of the k largest entries of the last axis, in descending
/// value order; ties resolve to the lowest index. Pure index computation:
/// never participates in differentiation.
template <typename T>
IndexTensor topk_indices(const Tensor<T>& x, std::int64_t k) {
  const std::int64_t n = x.extent(x.rank() - 1);
  if (k < 1 || k > n) {
    throw argument_error("topk_indices: k=" + std::to_string(k) + " out of range for last extent " +
                         std::to_string(n));
  }
  const std::int64_t rows = detail::leading_numel(x.shape(), 1);
  Shape out_shape = x.shape();
  out_shape.back() = k;
  IndexTensor out(std::move(out_shape));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * n;
    std::iota(order.begin(), order.end(), std::int64_t{0});
    std::sort(order.begin(), order.end(), [src](std::int64_t a, std::int64_t b) {
      if (src[a] != src[b]) return src[a] > src[b];
      return a < b;
    });
    for (std::int64_t i = 0; i < k; ++i) out[r * k + i] = order[static_cast<std::size_t>(i)];
  }
  return out;
}

/// Block gather along axis 0: out[i, j] = x[idx[i, j]] for x of shape
/// (r, t, c) and idx of shape (r, k), giving (r, k, t, c). Blocks are verbatim
/// copies in idx order.
template <typename T>
Tensor<T> gather_axis0(const Tensor<T>& x, const IndexTensor& idx) {
  if (x.rank() != 3 || idx.rank() != 2) {
    throw dimension_error("gather_axis0: expected x rank 3 and idx rank 2, got " +
                          shape_str(x.shape()) + " and " + shape_str(idx.shape()));
  }
  const std::int64_t r = x.extent(0), t = x.extent(1), c = x.extent(2);
  const std::int64_t rows = idx.extent(0), k = idx.extent(1);
  const std::int64_t block = t * c;
  for (std::int64_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= r) {
      throw index_error("gather_axis0: index " + std::to_string(idx[i]) +
                        " out of range for extent " + std::to_string(r));
    }
  }
  Tensor<T> out({rows, k, t, c});
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < k; ++j) {
      const T* src = x.data() + idx(i, j) * block;
      T* dst = out.data() + (i * k + j) * block;
      std::copy(src, src + block, dst);
    }
  }
  return out;
}

/// Per-channel 2-D cross-correlation, stride 1, zero padding (s-1)/2 so the
/// spatial extents are preserved. x is (h, w, c), kernel (s, s, c).
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel) {
  if (x.rank() != 3 || kernel.rank() != 3) {
    throw dimension_error("depthwise_conv2d: expected x (h,w,c) and kernel (s,s,c), got " +
                          shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const std::int64_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  const std::int64_t s = kernel.extent(0);
  if (kernel.extent(1) != s || kernel.extent(2) != c) {
    throw dimension_error("depthwise_conv2d: kernel " + shape_str(kernel.shape()) +
                          " does not match input " + shape_str(x.shape()));
  }
  if (s % 2 == 0) throw argument_error("depthwise_conv2d: kernel extent must be odd, got " +
                                       std::to_string(s));
  const std::int64_t pad = (s - 1) / 2;
  Tensor<T> out({h, w, c});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t xx = 0; xx < w; ++xx) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (std::int64_t ky = 0; ky < s; ++ky) {
          const std::int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (std::int64_t kx = 0; kx < s; ++kx) {
            const std::int64_t sx = xx + kx - pad;
            if (sx < 0 || sx >= w) continue;
            acc += x(sy, sx, ch) * kernel(ky, kx, ch);
          }
        }
        out(y, xx, ch) = acc;
      }
    }
  }
  return out;
}

namespace detail {

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t s, std::int64_t stride,
                                    std::int64_t pad) {
  return (in + 2 * pad - s) / stride + 1;
}

// Unrolls (s, s, cin) patches into rows so the convolution becomes one
// matrix product with the kernel reshaped to (s*s*cin, cout).
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::int64_t s, std::int64_t stride, std::int64_t pad,
                 std::int64_t ho, std::int64_t wo) {
  const std::int64_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  Tensor<T> col({ho * wo, s * s * cin});
  for (std::int64_t oy = 0; oy < ho; ++oy) {
    for (std::int64_t ox = 0; ox < wo; ++ox) {
      T* row = col.data() + (oy * wo + ox) * s * s * cin;
      for (std::int64_t ky = 0; ky < s; ++ky) {
        const std::int64_t sy = oy * stride + ky - pad;
        for (std::int64_t kx = 0; kx < s; ++kx) {
          const std::int64_t sx = ox * stride + kx - pad;
          T* cell = row + (ky * s + kx) * cin;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            std::fill(cell, cell + cin, T(0));
          } else {
            const T* src = x.data() + (sy * w + sx) * cin;
            std::copy(src, src + cin, cell);
          }
        }
      }
    }
  }
  return col;
}

}  // namespace detail

/// Dense 2-D cross-correlation with zero padding. x is (h, w, cin), kernel
/// (s, s, cin, cout); output is (ho, wo, cout).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::int64_t stride,
                 std::int64_t pad) {
  if (x.rank() != 3 || kernel.rank() != 4) {
    throw dimension_error("conv2d: expected x (h,w,cin) and kernel (s,s,cin,cout), got " +
                          shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const std::int64_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  const std::int64_t s = kernel.extent(0), cout = kernel.extent(3);
  if (kernel.extent(1) != s || kernel.extent(2) != cin) {
    throw dimension_error("conv2d: kernel " + shape_str(kernel.shape()) +
                          " does not match input " + shape_str(x.shape()));
  }
  if (stride < 1 || pad < 0) throw argument_error("conv2d: stride must be >= 1 and pad >= 0");
  const std::int64_t ho = detail::conv_out_extent(h, s, stride, pad);
  const std::int64_t wo = detail::conv_out_extent(w, s, stride, pad);
  if (ho < 1 || wo < 1) {
    throw argument_error("conv2d: degenerate output extent for input " + shape_str(x.shape()) +
                         ", kernel " + std::to_string(s) + ", stride " + std::to_string(stride) +
                         ", pad " + std::to_string(pad));
  }
  Tensor<T> col = detail::im2col(x, s, stride, pad, ho, wo);
  Tensor<T> out({ho, wo, cout});
  auto cm = map_matrix(col, ho * wo, s * s * cin);
  auto km = map_matrix(kernel, s * s * cin, cout);
  auto om = map_matrix(out, ho * wo, cout);
  om.noalias() = cm * km;
  return out;
}

/// Standardize each last-axis slice to zero mean and unit variance, then
/// apply the per-channel affine (gain, bias).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::int64_t c = x.extent(x.rank() - 1);
  if (gain.size() != c || bias.size() != c) {
    throw dimension_error("layer_norm: gain/bias length must equal last extent " +
                          std::to_string(c));
  }
  if (!(eps > T(0))) throw argument_error("layer_norm: eps must be > 0");
  const std::int64_t rows = detail::leading_numel(x.shape(), 1);
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * c;
    T* dst = out.data() + r * c;
    T mean = T(0);
    for (std::int64_t i = 0; i < c; ++i) mean += src[i];
    mean /= static_cast<T>(c);
    T var = T(0);
    for (std::int64_t i = 0; i < c; ++i) {
      const T d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < c; ++i) dst[i] = (src[i] - mean) * inv * gain[i] + bias[i];
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw dimension_error("add: shapes differ, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return out;
}

/// Broadcast-add a length-c vector over the last axis.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::int64_t c = x.extent(x.rank() - 1);
  if (b.size() != c) {
    throw dimension_error("add_bias: bias length " + std::to_string(b.size()) +
                          " must equal last extent " + std::to_string(c));
  }
  const std::int64_t rows = detail::leading_numel(x.shape(), 1);
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t i = 0; i < c; ++i) out[r * c + i] = x[r * c + i] + b[i];
  return out;
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T inv_sqrt2 = T(0.7071067811865475244L);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  }
  return out;
}

/// Sum of all entries, as a shape-[1] tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (std::int64_t i = 0; i < x.size(); ++i) acc += x[i];
  return Tensor<T>::scalar(acc);
}

/// Fresh copy with a new shape of equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw dimension_error("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.size()) +
                          " elements, target " + shape_str(shape) + " has " +
                          std::to_string(shape_numel(shape)));
  }
  std::vector<T> data(x.data(), x.data() + x.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

/// Contiguous slice [start, start+len) of the last axis.
template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::int64_t start, std::int64_t len) {
  const std::int64_t c = x.extent(x.rank() - 1);
  if (start < 0 || len < 1 || start + len > c) {
    throw argument_error("slice_last: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") invalid for extent " + std::to_string(c));
  }
  Shape out_shape = x.shape();
  out_shape.back() = len;
  Tensor<T> out(std::move(out_shape));
  const std::int64_t rows = detail::leading_numel(x.shape(), 1);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * c + start;
    std::copy(src, src + len, out.data() + r * len);
  }
  return out;
}

/// Concatenate along the last axis; all other extents must match.
template <typename T>
Tensor<T> concat_last(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw argument_error("concat_last: no parts");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (!std::equal(lead.begin(), lead.end(), p.shape().begin()) ||
        p.rank() != static_cast<std::int64_t>(lead.size()) + 1) {
      throw dimension_error("concat_last: leading extents differ, " +
                            shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    total += p.extent(p.rank() - 1);
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(std::move(out_shape));
  const std::int64_t rows = shape_numel(lead);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t c = p.extent(p.rank() - 1);
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy(p.data() + r * c, p.data() + (r + 1) * c, out.data() + r * total + off);
    }
    off += c;
  }
  return out;
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  return concat_last(std::span<const Tensor<T>>(parts.data(), parts.size()));
}

/// Split an (H, W, C) map into non-overlapped (bh, bw) blocks:
/// (nby*nbx, bh*bw, C) with blocks ordered row-major over the grid and
/// tokens row-major within each block.
template <typename T>
Tensor<T> to_regions(const Tensor<T>& x, std::int64_t bh, std::int64_t bw) {
  if (x.rank() != 3) throw dimension_error("to_regions: expected (h,w,c), got " +
                                           shape_str(x.shape()));
  const std::int64_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  if (bh < 1 || bw < 1 || h % bh != 0 || w % bw != 0) {
    throw configuration_error("to_regions: block " + std::to_string(bh) + "x" +
                              std::to_string(bw) + " does not divide map " + std::to_string(h) +
                              "x" + std::to_string(w));
  }
  const std::int64_t nby = h / bh, nbx = w / bw;
  Tensor<T> out({nby * nbx, bh * bw, c});
  for (std::int64_t by = 0; by < nby; ++by)
    for (std::int64_t bx = 0; bx < nbx; ++bx)
      for (std::int64_t y = 0; y < bh; ++y) {
        const T* src = x.data() + ((by * bh + y) * w + bx * bw) * c;
        T* dst = out.data() + (((by * nbx + bx) * bh + y) * bw) * c;
        std::copy(src, src + bw * c, dst);
      }
  return out;
}

/// Inverse of to_regions.
template <typename T>
Tensor<T> from_regions(const Tensor<T>& x, std::int64_t bh, std::int64_t bw, std::int64_t h,
                       std::int64_t w) {
  if (x.rank() != 3) throw dimension_error("from_regions: expected (n,t,c), got " +
                                           shape_str(x.shape()));
  const std::int64_t c = x.extent(2);
  if (bh < 1 || bw < 1 || h % bh != 0 || w % bw != 0 || x.extent(0) != (h / bh) * (w / bw) ||
      x.extent(1) != bh * bw) {
    throw dimension_error("from_regions: extents " + shape_str(x.shape()) +
                          " inconsistent with map " + std::to_string(h) + "x" + std::to_string(w) +
                          " and block " + std::to_string(bh) + "x" + std::to_string(bw));
  }
  const std::int64_t nbx = w / bw;
  const std::int64_t nby = h / bh;
  Tensor<T> out({h, w, c});
  for (std::int64_t by = 0; by < nby; ++by)
    for (std::int64_t bx = 0; bx < nbx; ++bx)
      for (std::int64_t y = 0; y < bh; ++y) {
        const T* src = x.data() + (((by * nbx + bx) * bh + y) * bw) * c;
        T* dst = out.data() + ((by * bh + y) * w + bx * bw) * c;
        std::copy(src, src + bw * c, dst);
      }
  return out;
}

}  // namespace bra
