#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bra/tape.hpp"

namespace bra {

/// Multi-head self-attention weights. Head i projects with the i-th C/h-wide
/// column block of each joint matrix, which is the per-head weight layout of
/// standard MHSA stored concatenated.
template <typename V>
struct MhsaParamsT {
  V wq, wk, wv;  // (C, C)
  V wo;          // (C, C)
  std::int64_t heads = 1;
};

template <typename T>
using MhsaParams = MhsaParamsT<Tensor<T>>;

/// Per-token linear map: x (..., C) times w (C, D) -> (..., D).
template <typename V>
V project_tokens(const V& x, const V& w) {
  // Extents are copied up front: a taped V invalidates value() references
  // whenever a new node is recorded.
  const Shape x_shape = value(x).shape();
  const Shape w_shape = value(w).shape();
  const std::int64_t c = x_shape[x_shape.size() - 1];
  if (w_shape.size() != 2 || w_shape[0] != c) {
    throw dimension_error("project_tokens: weight " + shape_str(w_shape) +
                          " does not accept channels " + std::to_string(c));
  }
  Shape lead(x_shape.begin(), x_shape.end() - 1);
  V out = matmul(reshape(x, {shape_numel(lead), c}), w);
  Shape out_shape = lead;
  out_shape.push_back(w_shape[1]);
  return reshape(out, std::move(out_shape));
}

/// Scaled dot-product attention: softmax(Q Kᵀ / sqrt(c)) V, batched over any
/// leading axes. c is the channel extent of the inputs as passed.
template <typename V>
V attention(const V& q, const V& k, const V& v) {
  using T = scalar_t<V>;
  const auto& qv = value(q);
  const auto& kv = value(k);
  const auto& vv = value(v);
  const std::int64_t c = qv.extent(qv.rank() - 1);
  if (kv.extent(kv.rank() - 1) != c) {
    throw dimension_error("attention: query channels " + std::to_string(c) +
                          " != key channels " + std::to_string(kv.extent(kv.rank() - 1)));
  }
  if (kv.extent(kv.rank() - 2) != vv.extent(vv.rank() - 2)) {
    throw dimension_error("attention: key count " + std::to_string(kv.extent(kv.rank() - 2)) +
                          " != value count " + std::to_string(vv.extent(vv.rank() - 2)));
  }
  V scores = scale(matmul(q, transpose_last2(k)), T(1) / std::sqrt(static_cast<T>(c)));
  return matmul(softmax_lastaxis(scores), v);
}

/// Multi-head self-attention over tokens: x is (..., n, C); heads run on
/// C/h-channel slices of the joint projections and are concatenated before
/// the output projection.
template <typename V>
V mhsa(const V& x, const MhsaParamsT<V>& p) {
  const auto& xv = value(x);
  if (xv.rank() < 2) {
    throw dimension_error("mhsa: expected (..., n, C), got " + shape_str(xv.shape()));
  }
  const std::int64_t c = xv.extent(xv.rank() - 1);
  if (p.heads < 1 || c % p.heads != 0) {
    throw configuration_error("mhsa: channels " + std::to_string(c) +
                              " not divisible by heads " + std::to_string(p.heads));
  }
  V q = project_tokens(x, p.wq);
  V k = project_tokens(x, p.wk);
  V v = project_tokens(x, p.wv);
  const std::int64_t ch = c / p.heads;
  std::vector<V> heads;
  heads.reserve(static_cast<std::size_t>(p.heads));
  for (std::int64_t i = 0; i < p.heads; ++i) {
    heads.push_back(attention(slice_last(q, i * ch, ch), slice_last(k, i * ch, ch),
                              slice_last(v, i * ch, ch)));
  }
  return project_tokens(concat_last(heads), p.wo);
}

/// MHSA restricted to non-overlapped window × window blocks; tokens never
/// attend across windows.
template <typename V>
V window_attention(const V& x, std::int64_t window, const MhsaParamsT<V>& p) {
  const auto& xv = value(x);
  if (xv.rank() != 3) {
    throw dimension_error("window_attention: expected (H, W, C), got " + shape_str(xv.shape()));
  }
  const std::int64_t h = xv.extent(0), w = xv.extent(1);
  if (window < 1 || h % window != 0 || w % window != 0) {
    throw configuration_error("window_attention: window " + std::to_string(window) +
                              " does not divide map " + std::to_string(h) + "x" +
                              std::to_string(w));
  }
  V blocks = to_regions(x, window, window);
  return from_regions(mhsa(blocks, p), window, window, h, w);
}

}  // namespace bra
