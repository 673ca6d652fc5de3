#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "bra/tape.hpp"

namespace bra {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Instances whose top-k routing margin (gap between the k-th and (k+1)-th
  // affinity in any row) falls below this are resampled: a ranking flip
  // inside the finite-difference stencil would invalidate the comparison.
  double min_routing_margin = 1e-3;
  int max_resamples = 32;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::int64_t entries_checked = 0;
  int resamples = 0;
  bool pass = false;
  std::string worst;
};

/// One sampled check instance: the parameters to differentiate against, the
/// loss as a generic functor (callable with std::vector<Tensor<double>> or
/// std::vector<Var<double>>), and the instance's routing margin (infinite
/// when no routing is involved).
template <typename LossFn>
struct GradCheckCase {
  std::vector<Tensor<double>> params;
  double routing_margin = std::numeric_limits<double>::infinity();
  LossFn loss;
};

template <typename LossFn>
GradCheckCase<LossFn> make_grad_case(std::vector<Tensor<double>> params, double margin,
                                     LossFn loss) {
  return GradCheckCase<LossFn>{std::move(params), margin, std::move(loss)};
}

/// Compare tape gradients of a scalar loss against central finite differences
/// (f(p+h) - f(p-h)) / 2h for every entry of every parameter.
///
/// make_case(rng) draws a fresh instance; instances too close to a routing
/// tie are rejected and resampled.
template <typename MakeCase>
GradCheckReport grad_check(MakeCase&& make_case, const GradCheckOptions& opts = {}) {
  std::mt19937_64 rng(opts.seed);
  GradCheckReport report;
  for (int attempt = 0; attempt <= opts.max_resamples; ++attempt) {
    auto kase = make_case(rng);
    if (kase.routing_margin < opts.min_routing_margin) {
      ++report.resamples;
      continue;
    }

    // Analytic gradients via one taped evaluation.
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    leaves.reserve(kase.params.size());
    for (const auto& p : kase.params) leaves.push_back(tape.leaf(p));
    Var<double> loss = kase.loss(leaves);
    const double f0 = value(loss)[0];
    if (!std::isfinite(f0)) {
      throw evaluation_error("grad_check: non-finite forward value " + std::to_string(f0));
    }
    tape.backward(loss);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto v : leaves) analytic.push_back(tape.grad(v));

    // Central differences on the eager path (same generic pipeline).
    auto eval = [&]() {
      Tensor<double> out = kase.loss(kase.params);
      if (!std::isfinite(out[0])) {
        throw evaluation_error("grad_check: non-finite forward value during differencing");
      }
      return out[0];
    };
    for (std::size_t pi = 0; pi < kase.params.size(); ++pi) {
      auto& p = kase.params[pi];
      for (std::int64_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + opts.step;
        const double fp = eval();
        p[i] = orig - opts.step;
        const double fm = eval();
        p[i] = orig;
        const double fd = (fp - fm) / (2.0 * opts.step);
        const double an = analytic[pi][i];
        const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-6});
        const double rel = std::fabs(an - fd) / denom;
        ++report.entries_checked;
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst = "param " + std::to_string(pi) + " entry " + std::to_string(i) +
                         " analytic " + std::to_string(an) + " fd " + std::to_string(fd);
        }
      }
    }
    report.pass = report.max_rel_err <= opts.tolerance;
    return report;
  }
  throw evaluation_error("grad_check: exhausted resamples without clearing the routing margin");
}

}  // namespace bra
