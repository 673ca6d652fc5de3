#include "bra/flops.hpp"

#include <cmath>
#include <string>

namespace bra {

FlopsBreakdown flops_bra(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t s,
                         std::int64_t k) {
  if (h < 1 || w < 1 || c < 1 || s < 1) {
    throw configuration_error("flops_bra: extents must be positive");
  }
  const std::int64_t hw = h * w;
  const std::int64_t nregions = s * s;
  if (hw % nregions != 0) {
    throw configuration_error("flops_bra: H*W=" + std::to_string(hw) + " not divisible by S^2=" +
                              std::to_string(nregions));
  }
  if (k < 1 || k > nregions) {
    throw configuration_error("flops_bra: violates 1 <= k <= S^2 (k=" + std::to_string(k) +
                              ", S^2=" + std::to_string(nregions) + ")");
  }
  FlopsBreakdown out;
  out.proj = 3 * hw * c * c;
  out.routing = 2 * nregions * nregions * c;
  out.attn = 2 * hw * k * (hw / nregions) * c;
  out.total = out.proj + out.routing + out.attn;
  return out;
}

double optimal_partition(double h, double w, double k) {
  if (!(h > 0.0) || !(w > 0.0) || !(k > 0.0)) {
    throw argument_error("optimal_partition: H, W, k must be positive");
  }
  const double hw = h * w;
  return std::pow(0.5 * k * hw * hw, 1.0 / 6.0);
}

double flops_routing_attn_continuous(double hw, double c, double k) {
  return 3.0 * c * std::cbrt(2.0 * k * k) * std::pow(hw, 4.0 / 3.0);
}

double flops_lower_bound(double h, double w, double c, double k) {
  const double hw = h * w;
  return 3.0 * hw * c * c + flops_routing_attn_continuous(hw, c, k);
}

ComparatorCosts flops_comparators(std::int64_t h, std::int64_t w, std::int64_t c) {
  const std::int64_t hw = h * w;
  return ComparatorCosts{2 * hw * hw * c, 2 * hw * (h + w) * c};
}

std::int64_t flops_window_attn(std::int64_t h, std::int64_t w, std::int64_t c,
                               std::int64_t window) {
  return 2 * h * w * window * window * c;
}

namespace {

std::int64_t nearest_valid_partition(std::int64_t side, std::int64_t k, double target) {
  std::int64_t best = -1;
  double best_dist = 0.0;
  for (std::int64_t d = 1; d <= side; ++d) {
    if (side % d != 0 || k > d * d) continue;
    const double dist = std::fabs(static_cast<double>(d) - target);
    if (best < 0 || dist < best_dist) {
      best = d;
      best_dist = dist;
    }
  }
  if (best < 0 || best < target / 2.0 || best > target * 2.0) {
    throw configuration_error("scaling_report: no valid divisor of " + std::to_string(side) +
                              " within x2 of S*=" + std::to_string(target));
  }
  return best;
}

}  // namespace

ScalingReport scaling_report(const std::vector<std::int64_t>& token_counts, std::int64_t c,
                             std::int64_t k, bool rescale) {
  if (token_counts.size() < 4) {
    throw configuration_error("scaling_report: needs at least 4 resolutions, got " +
                              std::to_string(token_counts.size()));
  }
  ScalingReport report;
  report.rescaled = rescale;
  std::int64_t frozen = -1;
  for (std::int64_t tokens : token_counts) {
    const auto side = static_cast<std::int64_t>(std::llround(std::sqrt(
        static_cast<double>(tokens))));
    if (side * side != tokens) {
      throw configuration_error("scaling_report: token count " + std::to_string(tokens) +
                                " is not a square grid");
    }
    ScalingPoint pt;
    pt.tokens = tokens;
    pt.side = side;
    pt.target = optimal_partition(static_cast<double>(side), static_cast<double>(side),
                                  static_cast<double>(k));
    if (rescale || frozen < 0) {
      pt.partition = nearest_valid_partition(side, k, pt.target);
      if (frozen < 0) frozen = pt.partition;
    } else {
      pt.partition = frozen;
    }
    const FlopsBreakdown fb = flops_bra(side, side, c, pt.partition, k);
    pt.flops = fb.routing + fb.attn;
    report.points.push_back(pt);
  }

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(report.points.size());
  for (const auto& pt : report.points) {
    const double x = std::log(static_cast<double>(pt.tokens));
    const double y = std::log(static_cast<double>(pt.flops));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  report.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return report;
}

std::int64_t flops_model(const ModelSpec& spec, std::int64_t h, std::int64_t w) {
  spec.validate();
  std::int64_t total = 0;
  for (std::int64_t i = 0; i < spec.stages(); ++i) {
    const std::int64_t hs = spec.stage_extent(h, i);
    const std::int64_t ws = spec.stage_extent(w, i);
    const std::int64_t c = spec.stage_channels(i);
    const std::int64_t cin = i == 0 ? 3 : spec.stage_channels(i - 1);
    const std::int64_t ks = spec.embed_kernel_extent(i);
    total += hs * ws * ks * ks * cin * c;
    const std::int64_t hw = hs * ws;
    const std::int64_t s = spec.stage_partition[static_cast<std::size_t>(i)];
    const std::int64_t k = spec.stage_topk[static_cast<std::size_t>(i)];
    const FlopsBreakdown bra_cost = flops_bra(hs, ws, c, s, k);
    const std::int64_t per_block = hw * 9 * c                         // position depthwise
                                   + bra_cost.total
                                   + hw * spec.lce_kernel * spec.lce_kernel * c
                                   + hw * c * c                       // output projection
                                   + 2 * hw * c * spec.mlp_ratio * c; // mlp
    total += per_block * spec.blocks_per_stage[static_cast<std::size_t>(i)];
  }
  total += spec.stage_channels(spec.stages() - 1) * spec.num_classes;
  return total;
}

}  // namespace bra
