#pragma once

#include <cstdint>
#include <vector>

#include "bra/model_spec.hpp"

namespace bra {

// Analytic cost model under the convention one multiply-accumulate = one
// FLOP. The three mechanism terms for one routed-attention layer:
//   proj    = 3 H W C^2
//   routing = 2 (S^2)^2 C
//   attn    = 2 H W k (H W / S^2) C

struct FlopsBreakdown {
  std::int64_t proj = 0;
  std::int64_t routing = 0;
  std::int64_t attn = 0;
  std::int64_t total = 0;
};

FlopsBreakdown flops_bra(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t s,
                         std::int64_t k);

/// Stationary region partition factor S* = (k/2 * (HW)^2)^(1/6); at S* the
/// routing and attention terms balance (2 S^4 = k (HW)^2 / S^2).
double optimal_partition(double h, double w, double k);

/// Continuous lower bound on flops_bra.total over S:
/// 3 H W C^2 + 3 C (2 k^2)^(1/3) (H W)^(4/3), from the arithmetic-geometric
/// mean inequality over {routing, attn/2, attn/2}.
double flops_lower_bound(double h, double w, double c, double k);

/// The non-projection part of the bound: 3 C (2 k^2)^(1/3) (HW)^(4/3).
double flops_routing_attn_continuous(double hw, double c, double k);

/// Attention-only cost of comparator mechanisms (score + aggregate terms,
/// projections excluded, for like-for-like comparison with routing + attn).
struct ComparatorCosts {
  std::int64_t vanilla = 0;  // 2 (HW)^2 C
  std::int64_t axial = 0;    // 2 HW (H + W) C
};

ComparatorCosts flops_comparators(std::int64_t h, std::int64_t w, std::int64_t c);

std::int64_t flops_window_attn(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t window);

struct ScalingPoint {
  std::int64_t tokens = 0;     // H * W
  std::int64_t side = 0;       // H = W
  std::int64_t partition = 0;  // chosen S
  double target = 0.0;         // S* from the stationarity rule
  std::int64_t flops = 0;      // routing + attn
};

struct ScalingReport {
  std::vector<ScalingPoint> points;
  double slope = 0.0;  // least-squares fit of log(flops) vs log(tokens)
  bool rescaled = true;
};

/// Evaluate routing + attention cost over square token grids. With rescale,
/// each resolution picks the valid divisor S nearest its S*; without, S stays
/// frozen at the first resolution's choice.
ScalingReport scaling_report(const std::vector<std::int64_t>& token_counts, std::int64_t c,
                             std::int64_t k, bool rescale = true);

/// Whole-model multiply-accumulate count at the given input size.
std::int64_t flops_model(const ModelSpec& spec, std::int64_t h, std::int64_t w);

}  // namespace bra
