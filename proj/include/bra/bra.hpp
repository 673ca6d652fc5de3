#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bra/attention.hpp"

namespace bra {

/// Bi-level routing attention configuration.
struct BraConfig {
  std::int64_t regions_per_side = 1;  // S: the map splits into S x S regions
  std::int64_t topk = 1;              // k: routed regions per region
  std::int64_t heads = 1;
  std::int64_t channels = 1;
  std::int64_t lce_kernel = 5;        // odd extent of the local-enhancement depthwise kernel

  void validate() const {
    if (regions_per_side < 1) {
      throw configuration_error("BraConfig: S must be >= 1, got " +
                                std::to_string(regions_per_side));
    }
    const std::int64_t nregions = regions_per_side * regions_per_side;
    if (topk < 1 || topk > nregions) {
      throw configuration_error("BraConfig: violates 1 <= k <= S^2 (k=" + std::to_string(topk) +
                                ", S^2=" + std::to_string(nregions) + ")");
    }
    if (heads < 1 || channels < 1 || channels % heads != 0) {
      throw configuration_error("BraConfig: violates C divisible by h (C=" +
                                std::to_string(channels) + ", h=" + std::to_string(heads) + ")");
    }
    if (lce_kernel < 1 || lce_kernel % 2 == 0) {
      throw configuration_error("BraConfig: violates lce_kernel odd, got " +
                                std::to_string(lce_kernel));
    }
  }
};

/// Pruned region-to-region affinity graph: the dense affinity matrix and the
/// per-region top-k indices selected from it.
template <typename T>
struct RoutingTable {
  Tensor<T> affinity;   // (S², S²)
  IndexTensor indices;  // (S², k), rows hold distinct region indices
};

/// Joint projection weights plus the depthwise local-enhancement kernel.
template <typename V>
struct BraParamsT {
  V wq, wk, wv;   // (C, C)
  V wo;           // (C, C)
  V lce_kernel;   // (s, s, C)
};

template <typename T>
using BraParams = BraParamsT<Tensor<T>>;

/// Multiply-accumulate counts recorded while running bra_forward, split the
/// same way the analytic cost model splits them.
struct FlopsCounter {
  std::int64_t proj = 0;
  std::int64_t routing = 0;
  std::int64_t attn = 0;
  std::int64_t other = 0;  // output projection and LCE, outside the three-term model

  std::int64_t mechanism_total() const { return proj + routing + attn; }
};

/// Reshape an (H, W, C) map into (S², HW/S², C) regions: region (i, j) holds
/// the (H/S) x (W/S) block at block-row i, block-column j, tokens row-major
/// within the block, regions row-major over (i, j).
template <typename V>
V patchify(const V& x, std::int64_t regions_per_side) {
  const auto& xv = value(x);
  if (xv.rank() != 3) {
    throw dimension_error("patchify: expected (H, W, C), got " + shape_str(xv.shape()));
  }
  const std::int64_t h = xv.extent(0), w = xv.extent(1);
  if (regions_per_side < 1 || h % regions_per_side != 0 || w % regions_per_side != 0) {
    throw configuration_error("patchify: map " + std::to_string(h) + "x" + std::to_string(w) +
                              " not divisible by S=" + std::to_string(regions_per_side));
  }
  return to_regions(x, h / regions_per_side, w / regions_per_side);
}

/// Exact inverse of patchify.
template <typename V>
V unpatchify(const V& x, std::int64_t regions_per_side, std::int64_t h, std::int64_t w) {
  const auto& xv = value(x);
  if (xv.rank() != 3) {
    throw dimension_error("unpatchify: expected (S², t, C), got " + shape_str(xv.shape()));
  }
  if (regions_per_side < 1 || h % regions_per_side != 0 || w % regions_per_side != 0) {
    throw dimension_error("unpatchify: map " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by S=" + std::to_string(regions_per_side));
  }
  return from_regions(x, h / regions_per_side, w / regions_per_side, h, w);
}

/// Region-to-region routing: pool queries and keys per region, form the
/// affinity matrix Qr Krᵀ (no scaling, no softmax: only the ranking matters),
/// and keep the top-k column indices per row. Runs on plain tensors: the
/// routing branch never contributes gradient.
template <typename T>
RoutingTable<T> route_regions(const Tensor<T>& q, const Tensor<T>& k, std::int64_t topk) {
  if (q.rank() != 3 || !q.same_shape(k)) {
    throw dimension_error("route_regions: expected matching (S², t, C) tensors, got " +
                          shape_str(q.shape()) + " and " + shape_str(k.shape()));
  }
  const std::int64_t nregions = q.extent(0);
  if (topk < 1 || topk > nregions) {
    throw configuration_error("route_regions: violates 1 <= k <= S^2 (k=" + std::to_string(topk) +
                              ", S^2=" + std::to_string(nregions) + ")");
  }
  Tensor<T> pooled_q = mean_axis(q, 1);
  Tensor<T> pooled_k = mean_axis(k, 1);
  Tensor<T> affinity = matmul(pooled_q, transpose_last2(pooled_k));
  return RoutingTable<T>{affinity, topk_indices(affinity, topk)};
}

/// Smallest gap between the k-th and (k+1)-th affinity over all rows;
/// infinite when k spans every region.
template <typename T>
double min_routing_margin(const Tensor<T>& affinity, std::int64_t topk) {
  const std::int64_t n = affinity.extent(affinity.rank() - 1);
  if (topk >= n) return std::numeric_limits<double>::infinity();
  double margin = std::numeric_limits<double>::infinity();
  std::vector<T> row(static_cast<std::size_t>(n));
  const std::int64_t rows = affinity.size() / n;
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(affinity.data() + r * n, affinity.data() + (r + 1) * n, row.begin());
    std::sort(row.begin(), row.end(), std::greater<T>());
    margin = std::min(margin, static_cast<double>(row[static_cast<std::size_t>(topk - 1)] -
                                                  row[static_cast<std::size_t>(topk)]));
  }
  return margin;
}

template <typename V>
struct BraProjections {
  V q, k, v;  // each (S², t, C)
};

/// Joint Q/K/V projections of the partitioned input.
template <typename V>
BraProjections<V> bra_project(const V& regions, const BraParamsT<V>& params,
                              FlopsCounter* counter = nullptr) {
  const auto& rv = value(regions);
  const std::int64_t nregions = rv.extent(0), t = rv.extent(1), c = rv.extent(2);
  V flat = reshape(regions, {nregions * t, c});
  V q = matmul(flat, params.wq);
  V k = matmul(flat, params.wk);
  V v = matmul(flat, params.wv);
  if (counter) counter->proj += 3 * nregions * t * c * value(params.wq).extent(1);
  Shape region_shape{nregions, t, c};
  return BraProjections<V>{reshape(q, region_shape), reshape(k, region_shape),
                           reshape(v, region_shape)};
}

/// Post-routing pipeline: gather routed key/value blocks, run per-head
/// token-to-token attention of each region's queries against its gathered
/// tokens, add the depthwise local context term computed on the value map,
/// apply the output projection, and restore the spatial layout.
template <typename V>
V bra_attend(const BraProjections<V>& proj, const IndexTensor& routes, const BraConfig& cfg,
             const BraParamsT<V>& params, std::int64_t h_map, std::int64_t w_map,
             FlopsCounter* counter = nullptr) {
  const auto& qv = value(proj.q);
  const std::int64_t nregions = qv.extent(0), t = qv.extent(1), c = qv.extent(2);
  const std::int64_t k = routes.extent(1);
  const std::int64_t ch = c / cfg.heads;

  // Gathered blocks keep I^r row order; flattening the (k, t) axes yields
  // k*t key-value tokens per region in that order.
  V gathered_k = reshape(gather_axis0(proj.k, routes), {nregions, k * t, c});
  V gathered_v = reshape(gather_axis0(proj.v, routes), {nregions, k * t, c});

  std::vector<V> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (std::int64_t i = 0; i < cfg.heads; ++i) {
    heads.push_back(attention(slice_last(proj.q, i * ch, ch),
                              slice_last(gathered_k, i * ch, ch),
                              slice_last(gathered_v, i * ch, ch)));
    if (counter) counter->attn += 2 * nregions * t * (k * t) * ch;
  }
  V attended = concat_last(heads);

  V value_map = unpatchify(proj.v, cfg.regions_per_side, h_map, w_map);
  V local = depthwise_conv2d(value_map, params.lce_kernel);
  if (counter) {
    const std::int64_t s = value(params.lce_kernel).extent(0);
    counter->other += h_map * w_map * s * s * c;
  }
  V combined = add(attended, patchify(local, cfg.regions_per_side));

  V out = matmul(reshape(combined, {nregions * t, c}), params.wo);
  if (counter) counter->other += nregions * t * c * value(params.wo).extent(1);
  return unpatchify(reshape(out, {nregions, t, c}), cfg.regions_per_side, h_map, w_map);
}

/// Bi-level routing attention over an (H, W, C) map: partition, project,
/// route, gather, attend, enhance, un-partition.
template <typename V>
V bra_forward(const V& x, const BraConfig& cfg, const BraParamsT<V>& params,
              FlopsCounter* counter = nullptr) {
  using T = scalar_t<V>;
  cfg.validate();
  const auto& xv = value(x);
  if (xv.rank() != 3) {
    throw dimension_error("bra_forward: expected (H, W, C), got " + shape_str(xv.shape()));
  }
  if (xv.extent(2) != cfg.channels) {
    throw configuration_error("bra_forward: input channels " + std::to_string(xv.extent(2)) +
                              " != configured channels " + std::to_string(cfg.channels));
  }
  const std::int64_t h = xv.extent(0), w = xv.extent(1);
  V regions = patchify(x, cfg.regions_per_side);
  BraProjections<V> proj = bra_project(regions, params, counter);
  RoutingTable<T> routing = route_regions(value(proj.q), value(proj.k), cfg.topk);
  if (counter) {
    // Affinity product counted at two ops per entry, mirroring the cost
    // model's routing term.
    const std::int64_t nregions = routing.affinity.extent(0);
    counter->routing += 2 * nregions * nregions * cfg.channels;
  }
  return bra_attend(proj, routing.indices, cfg, params, h, w, counter);
}

/// Routing diagnostics for one query position: its region, the regions it
/// routes to, and its post-softmax attention row over the gathered tokens
/// (averaged across heads), plus the row scattered back onto the map.
struct RoutingReport {
  std::int64_t query_x = 0, query_y = 0;
  std::int64_t region_index = 0;
  std::vector<std::int64_t> routed_regions;
  std::vector<double> attention_row;
  Tensor<double> heatmap;  // (H, W), raw weights; zero outside the routed set
};

template <typename T>
RoutingReport export_routing(const Tensor<T>& x, const BraConfig& cfg,
                             const BraParams<T>& params, std::int64_t query_x,
                             std::int64_t query_y) {
  cfg.validate();
  const std::int64_t h = x.extent(0), w = x.extent(1);
  if (query_x < 0 || query_x >= w || query_y < 0 || query_y >= h) {
    throw argument_error("export_routing: query (" + std::to_string(query_x) + ", " +
                         std::to_string(query_y) + ") outside map " + std::to_string(w) + "x" +
                         std::to_string(h));
  }
  const std::int64_t s = cfg.regions_per_side;
  const std::int64_t rh = h / s, rw = w / s;

  Tensor<T> regions = patchify(x, s);
  BraProjections<Tensor<T>> proj = bra_project(regions, params);
  RoutingTable<T> routing = route_regions(proj.q, proj.k, cfg.topk);

  const std::int64_t region = (query_y / rh) * s + (query_x / rw);
  const std::int64_t local = (query_y % rh) * rw + (query_x % rw);
  const std::int64_t t = rh * rw;
  const std::int64_t k = cfg.topk;
  const std::int64_t c = cfg.channels;
  const std::int64_t ch = c / cfg.heads;

  Tensor<T> gathered = reshape(gather_axis0(proj.k, routing.indices), {s * s, k * t, c});

  RoutingReport report;
  report.query_x = query_x;
  report.query_y = query_y;
  report.region_index = region;
  for (std::int64_t j = 0; j < k; ++j) report.routed_regions.push_back(routing.indices(region, j));

  report.attention_row.assign(static_cast<std::size_t>(k * t), 0.0);
  std::vector<double> scores(static_cast<std::size_t>(k * t));
  for (std::int64_t head = 0; head < cfg.heads; ++head) {
    const std::int64_t base = head * ch;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < k * t; ++j) {
      double dot = 0.0;
      for (std::int64_t cc = 0; cc < ch; ++cc) {
        dot += static_cast<double>(proj.q(region, local, base + cc)) *
               static_cast<double>(gathered(region, j, base + cc));
      }
      scores[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(ch));
      mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
    }
    double sum = 0.0;
    for (auto& v : scores) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (std::int64_t j = 0; j < k * t; ++j) {
      report.attention_row[static_cast<std::size_t>(j)] +=
          scores[static_cast<std::size_t>(j)] / sum / static_cast<double>(cfg.heads);
    }
  }

  report.heatmap = Tensor<double>({h, w});
  for (std::int64_t j = 0; j < k * t; ++j) {
    const std::int64_t target = routing.indices(region, j / t);
    const std::int64_t inner = j % t;
    const std::int64_t gy = (target / s) * rh + inner / rw;
    const std::int64_t gx = (target % s) * rw + inner % rw;
    report.heatmap(gy, gx) = report.attention_row[static_cast<std::size_t>(j)];
  }
  return report;
}

}  // namespace bra
