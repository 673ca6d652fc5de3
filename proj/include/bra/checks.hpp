#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bra/bra.hpp"

namespace bra {

struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Knobs for the verification suites driven by the CLI `check` command.
struct CheckSettings {
  std::uint64_t seed = 0;
  BraConfig bra{2, 1, 2, 8, 5};
  std::int64_t map_h = 8, map_w = 8;
  std::int64_t identity_instances = 100;
  std::int64_t degeneracy_seeds = 3;
  // Routed-attention cost fixture checked against the instrumented counter.
  std::int64_t fixture_h = 8, fixture_w = 8, fixture_c = 4;
  std::int64_t fixture_s = 2, fixture_k = 1;
  std::int64_t fixture_total = 11392;
};

/// bra_forward against the per-query brute-force reference over a sweep of
/// (S, k, heads) at single precision.
CheckResult check_oracle_equivalence(std::uint64_t seed);

/// Tape gradients of a scalar routed-attention loss against central finite
/// differences, double precision, with tie-margin resampling.
CheckResult check_gradients(const CheckSettings& settings);

/// Mean pairwise affinity between two token sets equals the affinity of
/// their mean tokens.
CheckResult check_pooling_identity(std::uint64_t seed, std::int64_t instances);

/// With k = S^2, bra_forward degenerates to full multi-head attention plus
/// the local term, double precision.
CheckResult check_degeneracy(std::uint64_t seed, std::int64_t nseeds);

/// Instrumented multiply-accumulate counter against the analytic model on
/// the fixture configuration.
CheckResult check_flops_accounting(const CheckSettings& settings);

std::vector<CheckResult> run_checks(const CheckSettings& settings);

}  // namespace bra
