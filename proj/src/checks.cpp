#include "bra/checks.hpp"

#include <cmath>

#include "bra/attention.hpp"
#include "bra/flops.hpp"
#include "bra/grad_check.hpp"
#include "bra/random.hpp"
#include "bra/reference.hpp"

namespace bra {

namespace {

template <typename T>
BraParams<T> random_bra_params(const BraConfig& cfg, std::mt19937_64& rng) {
  const std::int64_t c = cfg.channels;
  const double w = 1.0 / std::sqrt(static_cast<double>(c));
  return BraParams<T>{random_uniform<T>({c, c}, rng, T(-w), T(w)),
                      random_uniform<T>({c, c}, rng, T(-w), T(w)),
                      random_uniform<T>({c, c}, rng, T(-w), T(w)),
                      random_uniform<T>({c, c}, rng, T(-w), T(w)),
                      random_uniform<T>({cfg.lce_kernel, cfg.lce_kernel, c}, rng, T(-w), T(w))};
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace

CheckResult check_oracle_equivalence(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::int64_t h = 8, w = 8, c = 8;
  double worst = 0.0;
  std::int64_t cases = 0;
  for (std::int64_t s : {1, 2, 4}) {
    const std::int64_t nregions = s * s;
    for (std::int64_t k : {std::int64_t{1}, (nregions + 1) / 2, nregions}) {
      for (std::int64_t heads : {1, 2}) {
        BraConfig cfg{s, k, heads, c, 5};
        BraParams<float> params = random_bra_params<float>(cfg, rng);
        Tensor<float> x = random_uniform<float>({h, w, c}, rng, -1.0f, 1.0f);
        worst = std::max(worst, max_abs_diff(bra_forward(x, cfg, params),
                                             reference_bra_forward(x, cfg, params)));
        ++cases;
      }
    }
  }
  CheckResult result;
  result.name = "oracle-equivalence";
  result.measured = worst;
  result.tolerance = 1e-5;
  result.pass = worst < result.tolerance;
  result.detail = std::to_string(cases) + " configs, max |dev|";
  return result;
}

CheckResult check_gradients(const CheckSettings& settings) {
  const BraConfig cfg = settings.bra;
  const std::int64_t h = settings.map_h, w = settings.map_w;
  auto make_case = [&](std::mt19937_64& rng) {
    Tensor<double> x = random_uniform<double>({h, w, cfg.channels}, rng, -1.0, 1.0);
    BraParams<double> params = random_bra_params<double>(cfg, rng);
    BraProjections<Tensor<double>> proj = bra_project(patchify(x, cfg.regions_per_side), params);
    RoutingTable<double> routing = route_regions(proj.q, proj.k, cfg.topk);
    const double margin = min_routing_margin(routing.affinity, cfg.topk);
    auto loss = [x, cfg](const auto& ps) {
      using V = std::decay_t<decltype(ps[0])>;
      BraParamsT<V> bp{ps[0], ps[1], ps[2], ps[3], ps[4]};
      return sum_all(bra_forward(lift(x, ps[0]), cfg, bp));
    };
    return make_grad_case({params.wq, params.wk, params.wv, params.wo, params.lce_kernel},
                          margin, loss);
  };
  GradCheckOptions opts;
  opts.seed = settings.seed;
  opts.tolerance = 1e-4;
  GradCheckReport report = grad_check(make_case, opts);
  CheckResult result;
  result.name = "gradient";
  result.measured = report.max_rel_err;
  result.tolerance = opts.tolerance;
  result.pass = report.pass;
  result.detail = std::to_string(report.entries_checked) + " entries, " +
                  std::to_string(report.resamples) + " resamples, max rel err";
  return result;
}

CheckResult check_pooling_identity(std::uint64_t seed, std::int64_t instances) {
  std::mt19937_64 rng(seed);
  const std::int64_t n = 24, c = 8;
  double worst = 0.0;
  for (std::int64_t it = 0; it < instances; ++it) {
    Tensor<double> q = random_uniform<double>({n, c}, rng, -1.0, 1.0);
    Tensor<double> k = random_uniform<double>({n, c}, rng, -1.0, 1.0);
    auto draw_set = [&rng, n]() {
      std::vector<std::int64_t> set;
      for (std::int64_t i = 0; i < n; ++i)
        if (uniform01(rng) < 0.4) set.push_back(i);
      if (set.empty()) set.push_back(static_cast<std::int64_t>(rng() % n));
      return set;
    };
    const auto omega = draw_set();
    const auto omega2 = draw_set();
    double pairwise = 0.0;
    for (std::int64_t i : omega)
      for (std::int64_t j : omega2)
        for (std::int64_t d = 0; d < c; ++d) pairwise += q(i, d) * k(j, d);
    pairwise /= static_cast<double>(omega.size() * omega2.size());
    double of_means = 0.0;
    for (std::int64_t d = 0; d < c; ++d) {
      double mq = 0.0, mk = 0.0;
      for (std::int64_t i : omega) mq += q(i, d);
      for (std::int64_t j : omega2) mk += k(j, d);
      of_means += (mq / static_cast<double>(omega.size())) *
                  (mk / static_cast<double>(omega2.size()));
    }
    const double rel = std::fabs(pairwise - of_means) /
                       std::max({std::fabs(pairwise), std::fabs(of_means), 1e-12});
    worst = std::max(worst, rel);
  }
  CheckResult result;
  result.name = "pooling-identity";
  result.measured = worst;
  result.tolerance = 1e-6;
  result.pass = worst < result.tolerance;
  result.detail = std::to_string(instances) + " instances, max rel err";
  return result;
}

CheckResult check_degeneracy(std::uint64_t seed, std::int64_t nseeds) {
  double worst = 0.0;
  const std::int64_t h = 8, w = 8, c = 8, s = 2;
  for (std::int64_t it = 0; it < nseeds; ++it) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(it));
    BraConfig cfg{s, s * s, 2, c, 5};
    BraParams<double> params = random_bra_params<double>(cfg, rng);
    Tensor<double> x = random_uniform<double>({h, w, c}, rng, -1.0, 1.0);
    Tensor<double> routed = bra_forward(x, cfg, params);

    // Full attention composed independently of the routing path.
    Tensor<double> flat = reshape(x, {h * w, c});
    Tensor<double> q = matmul(flat, params.wq);
    Tensor<double> k = matmul(flat, params.wk);
    Tensor<double> v = matmul(flat, params.wv);
    const std::int64_t ch = c / cfg.heads;
    std::vector<Tensor<double>> heads;
    for (std::int64_t i = 0; i < cfg.heads; ++i) {
      heads.push_back(attention(slice_last(q, i * ch, ch), slice_last(k, i * ch, ch),
                                slice_last(v, i * ch, ch)));
    }
    Tensor<double> att = concat_last(heads);
    Tensor<double> local = depthwise_conv2d(reshape(v, {h, w, c}), params.lce_kernel);
    Tensor<double> full =
        reshape(matmul(add(att, reshape(local, {h * w, c})), params.wo), {h, w, c});
    worst = std::max(worst, max_abs_diff(routed, full));
  }
  CheckResult result;
  result.name = "degeneracy";
  result.measured = worst;
  result.tolerance = 1e-10;
  result.pass = worst < result.tolerance;
  result.detail = std::to_string(nseeds) + " seeds, k=S^2 vs full attention, max |dev|";
  return result;
}

CheckResult check_flops_accounting(const CheckSettings& settings) {
  std::mt19937_64 rng(settings.seed);
  BraConfig cfg{settings.fixture_s, settings.fixture_k, 1, settings.fixture_c, 5};
  BraParams<float> params = random_bra_params<float>(cfg, rng);
  Tensor<float> x =
      random_uniform<float>({settings.fixture_h, settings.fixture_w, settings.fixture_c}, rng,
                            -1.0f, 1.0f);
  FlopsCounter counter;
  bra_forward(x, cfg, params, &counter);
  const FlopsBreakdown model = flops_bra(settings.fixture_h, settings.fixture_w,
                                         settings.fixture_c, settings.fixture_s,
                                         settings.fixture_k);
  const bool terms_match = counter.proj == model.proj && counter.routing == model.routing &&
                           counter.attn == model.attn;
  const bool fixture_match = model.total == settings.fixture_total;
  CheckResult result;
  result.name = "eq8-accounting";
  result.measured = static_cast<double>(counter.mechanism_total());
  result.tolerance = static_cast<double>(settings.fixture_total);
  result.pass = terms_match && fixture_match;
  result.detail = "counted " + std::to_string(counter.mechanism_total()) + " vs model " +
                  std::to_string(model.total) + " vs fixture " +
                  std::to_string(settings.fixture_total);
  return result;
}

std::vector<CheckResult> run_checks(const CheckSettings& settings) {
  settings.bra.validate();
  std::vector<CheckResult> results;
  results.push_back(check_oracle_equivalence(settings.seed));
  results.push_back(check_gradients(settings));
  results.push_back(check_pooling_identity(settings.seed, settings.identity_instances));
  results.push_back(check_degeneracy(settings.seed, settings.degeneracy_seeds));
  results.push_back(check_flops_accounting(settings));
  return results;
}

}  // namespace bra
