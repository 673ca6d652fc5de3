#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "bra/bra.hpp"

namespace bra {

/// Brute-force per-query reference for bi-level routing attention.
///
/// Deliberately shares nothing with the main pipeline: plain loops over raw
/// elements, double accumulation throughout. For each query token it attends
/// over the explicit union of its region's routed tokens, adds the depthwise
/// local term, and applies the output projection.
template <typename T>
Tensor<T> reference_bra_forward(const Tensor<T>& x, const BraConfig& cfg,
                                const BraParams<T>& params) {
  const std::int64_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  const std::int64_t s = cfg.regions_per_side;
  const std::int64_t rh = h / s, rw = w / s;
  const std::int64_t n = h * w, nregions = s * s, t = rh * rw;
  const std::int64_t k = cfg.topk;
  const std::int64_t heads = cfg.heads, ch = c / heads;

  auto project = [&](const Tensor<T>& weight) {
    std::vector<double> out(static_cast<std::size_t>(n * c), 0.0);
    for (std::int64_t p = 0; p < n; ++p)
      for (std::int64_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::int64_t d = 0; d < c; ++d)
          acc += static_cast<double>(x[p * c + d]) * static_cast<double>(weight[d * c + j]);
        out[static_cast<std::size_t>(p * c + j)] = acc;
      }
    return out;
  };
  const std::vector<double> q = project(params.wq);
  const std::vector<double> key = project(params.wk);
  const std::vector<double> val = project(params.wv);

  // Token list of a region in patchify order (row-major within the block).
  auto region_tokens = [&](std::int64_t r) {
    std::vector<std::int64_t> tokens;
    tokens.reserve(static_cast<std::size_t>(t));
    const std::int64_t by = (r / s) * rh, bx = (r % s) * rw;
    for (std::int64_t y = 0; y < rh; ++y)
      for (std::int64_t xx = 0; xx < rw; ++xx) tokens.push_back((by + y) * w + bx + xx);
    return tokens;
  };

  // Pooled affinities and top-k routing under the lowest-index tie rule.
  std::vector<double> pooled_q(static_cast<std::size_t>(nregions * c), 0.0);
  std::vector<double> pooled_k(static_cast<std::size_t>(nregions * c), 0.0);
  for (std::int64_t r = 0; r < nregions; ++r) {
    for (std::int64_t p : region_tokens(r))
      for (std::int64_t j = 0; j < c; ++j) {
        pooled_q[static_cast<std::size_t>(r * c + j)] += q[static_cast<std::size_t>(p * c + j)];
        pooled_k[static_cast<std::size_t>(r * c + j)] += key[static_cast<std::size_t>(p * c + j)];
      }
    for (std::int64_t j = 0; j < c; ++j) {
      pooled_q[static_cast<std::size_t>(r * c + j)] /= static_cast<double>(t);
      pooled_k[static_cast<std::size_t>(r * c + j)] /= static_cast<double>(t);
    }
  }
  std::vector<std::vector<std::int64_t>> routed(static_cast<std::size_t>(nregions));
  for (std::int64_t r = 0; r < nregions; ++r) {
    std::vector<double> aff(static_cast<std::size_t>(nregions), 0.0);
    for (std::int64_t r2 = 0; r2 < nregions; ++r2)
      for (std::int64_t j = 0; j < c; ++j)
        aff[static_cast<std::size_t>(r2)] += pooled_q[static_cast<std::size_t>(r * c + j)] *
                                             pooled_k[static_cast<std::size_t>(r2 * c + j)];
    std::vector<std::int64_t> order(static_cast<std::size_t>(nregions));
    std::iota(order.begin(), order.end(), std::int64_t{0});
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      if (aff[static_cast<std::size_t>(a)] != aff[static_cast<std::size_t>(b)])
        return aff[static_cast<std::size_t>(a)] > aff[static_cast<std::size_t>(b)];
      return a < b;
    });
    routed[static_cast<std::size_t>(r)].assign(order.begin(), order.begin() + k);
  }

  // Depthwise local term on the value map.
  const std::int64_t ks = params.lce_kernel.extent(0), pad = (ks - 1) / 2;
  std::vector<double> local(static_cast<std::size_t>(n * c), 0.0);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t xx = 0; xx < w; ++xx)
      for (std::int64_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::int64_t ky = 0; ky < ks; ++ky)
          for (std::int64_t kx = 0; kx < ks; ++kx) {
            const std::int64_t sy = y + ky - pad, sx = xx + kx - pad;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            acc += val[static_cast<std::size_t>((sy * w + sx) * c + j)] *
                   static_cast<double>(params.lce_kernel(ky, kx, j));
          }
        local[static_cast<std::size_t>((y * w + xx) * c + j)] = acc;
      }

  // Per-query attention over the gathered union, then the output projection.
  Tensor<T> out({h, w, c});
  std::vector<double> mixed(static_cast<std::size_t>(c));
  for (std::int64_t p = 0; p < n; ++p) {
    const std::int64_t r = ((p / w) / rh) * s + ((p % w) / rw);
    std::vector<std::int64_t> targets;
    targets.reserve(static_cast<std::size_t>(k * t));
    for (std::int64_t rt : routed[static_cast<std::size_t>(r)])
      for (std::int64_t tok : region_tokens(rt)) targets.push_back(tok);

    std::fill(mixed.begin(), mixed.end(), 0.0);
    std::vector<double> weights(targets.size());
    for (std::int64_t head = 0; head < heads; ++head) {
      const std::int64_t base = head * ch;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < targets.size(); ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < ch; ++j)
          dot += q[static_cast<std::size_t>(p * c + base + j)] *
                 key[static_cast<std::size_t>(targets[i] * c + base + j)];
        weights[i] = dot / std::sqrt(static_cast<double>(ch));
        mx = std::max(mx, weights[i]);
      }
      double sum = 0.0;
      for (auto& wv : weights) {
        wv = std::exp(wv - mx);
        sum += wv;
      }
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const double wt = weights[i] / sum;
        for (std::int64_t j = 0; j < ch; ++j)
          mixed[static_cast<std::size_t>(base + j)] +=
              wt * val[static_cast<std::size_t>(targets[i] * c + base + j)];
      }
    }
    for (std::int64_t j = 0; j < c; ++j)
      mixed[static_cast<std::size_t>(j)] += local[static_cast<std::size_t>(p * c + j)];
    for (std::int64_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::int64_t d = 0; d < c; ++d)
        acc += mixed[static_cast<std::size_t>(d)] * static_cast<double>(params.wo[d * c + j]);
      out[p * c + j] = static_cast<T>(acc);
    }
  }
  return out;
}

}  // namespace bra
