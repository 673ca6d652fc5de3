// Command-line harness: verification, FLOPs reporting, deterministic
// benchmarking, and routing export over the library.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bra/checks.hpp"
#include "bra/flops.hpp"
#include "bra/image.hpp"
#include "bra/model.hpp"

namespace {

using nlohmann::json;

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_flag;
  json config = json::object();
  std::uint64_t seed = 0;
};

std::uint64_t resolve_seed(const Options& opts) {
  if (opts.seed_flag) return *opts.seed_flag;
  if (const char* env = std::getenv("BRA_SEED")) return std::strtoull(env, nullptr, 10);
  if (opts.config.contains("seed")) return opts.config.at("seed").get<std::uint64_t>();
  return 0;
}

void write_report(const Options& opts, const std::string& command, const json& metrics,
                  const json& timing) {
  json report;
  report["command"] = command;
  report["config"] = opts.config;
  report["seed"] = opts.seed;
  report["metrics"] = metrics;
  report["timing"] = timing;  // excluded from the canonical (reproducible) form
  std::filesystem::create_directories(opts.out_dir);
  const auto path = std::filesystem::path(opts.out_dir) / ("report_" + command + ".json");
  std::ofstream out(path);
  if (!out) throw bra::io_error("cannot write " + path.string());
  out << report.dump(2) << "\n";
}

bra::ModelSpec model_from(const Options& opts, const std::string& preset_flag) {
  if (!preset_flag.empty()) return bra::preset(preset_flag);
  if (opts.config.contains("model")) return bra::model_spec_from_json(opts.config.at("model"));
  return bra::preset("biformer-t");
}

// ---- check ---------------------------------------------------------------

bra::CheckSettings settings_from(const Options& opts) {
  bra::CheckSettings s;
  s.seed = opts.seed;
  if (opts.config.contains("bra")) {
    const json& b = opts.config.at("bra");
    s.bra.regions_per_side = b.value("S", s.bra.regions_per_side);
    s.bra.topk = b.value("k", s.bra.topk);
    s.bra.heads = b.value("heads", s.bra.heads);
    s.bra.channels = b.value("channels", s.bra.channels);
    s.bra.lce_kernel = b.value("lce_kernel", s.bra.lce_kernel);
    s.map_h = b.value("H", s.map_h);
    s.map_w = b.value("W", s.map_w);
  }
  if (opts.config.contains("check")) {
    const json& c = opts.config.at("check");
    s.identity_instances = c.value("identity_instances", s.identity_instances);
    s.degeneracy_seeds = c.value("degeneracy_seeds", s.degeneracy_seeds);
    if (c.contains("fixture")) {
      const json& f = c.at("fixture");
      s.fixture_h = f.value("H", s.fixture_h);
      s.fixture_w = f.value("W", s.fixture_w);
      s.fixture_c = f.value("C", s.fixture_c);
      s.fixture_s = f.value("S", s.fixture_s);
      s.fixture_k = f.value("k", s.fixture_k);
      s.fixture_total = f.value("total", s.fixture_total);
    }
  }
  return s;
}

int run_check(Options& opts) {
  const bra::CheckSettings settings = settings_from(opts);
  settings.bra.validate();

  const auto start = std::chrono::steady_clock::now();
  const std::vector<bra::CheckResult> results = bra::run_checks(settings);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();

  json metrics = json::object();
  bool all_pass = true;
  std::string failed;
  for (const auto& r : results) {
    std::printf("%-7s %-20s measured %.3e  tolerance %.3e  (%s)\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.measured, r.tolerance, r.detail.c_str());
    metrics[r.name] = {{"pass", r.pass}, {"measured", r.measured}, {"tolerance", r.tolerance}};
    if (!r.pass) {
      all_pass = false;
      failed += (failed.empty() ? "" : ", ") + r.name;
    }
  }
  write_report(opts, "check", metrics, json{{"wall_seconds", wall}});
  if (!all_pass) {
    std::fprintf(stderr, "check failed: %s\n", failed.c_str());
    return 1;
  }
  return 0;
}

// ---- flops ---------------------------------------------------------------

void write_flops_csv(const std::string& path,
                     const std::vector<std::array<std::int64_t, 7>>& rows) {
  std::ofstream out(path);
  if (!out) throw bra::io_error("cannot write " + path);
  out << "HW,S,k,proj,routing,attn,total\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out << r[i] << (i + 1 < r.size() ? ',' : '\n');
  }
}

int run_flops(Options& opts, const std::string& preset_flag, std::int64_t res, std::int64_t h,
              std::int64_t w, std::int64_t c, std::int64_t s, std::int64_t k, bool scaling) {
  json metrics = json::object();
  std::vector<std::array<std::int64_t, 7>> csv_rows;
  std::filesystem::create_directories(opts.out_dir);
  const auto csv_path = (std::filesystem::path(opts.out_dir) / "flops.csv").string();

  if (scaling) {
    const std::vector<std::int64_t> tokens = {256, 1024, 4096, 16384};
    const bra::ScalingReport rescaled = bra::scaling_report(tokens, c, k, true);
    const bra::ScalingReport frozen = bra::scaling_report(tokens, c, k, false);
    std::printf("scaling slope (S rescaled): %.4f   (S frozen): %.4f\n", rescaled.slope,
                frozen.slope);
    json points = json::array();
    std::ofstream loglog(std::filesystem::path(opts.out_dir) / "scaling.csv");
    loglog << "log_tokens,log_flops\n";
    for (const auto& pt : rescaled.points) {
      std::printf("  tokens %6lld  S*=%6.2f  S=%3lld  flops %lld\n",
                  static_cast<long long>(pt.tokens), pt.target,
                  static_cast<long long>(pt.partition), static_cast<long long>(pt.flops));
      points.push_back({{"tokens", pt.tokens},
                        {"S", pt.partition},
                        {"S_star", pt.target},
                        {"flops", pt.flops}});
      loglog << std::log(static_cast<double>(pt.tokens)) << ","
             << std::log(static_cast<double>(pt.flops)) << "\n";
    }
    metrics["slope"] = rescaled.slope;
    metrics["slope_frozen"] = frozen.slope;
    metrics["points"] = points;
    write_report(opts, "flops", metrics, json::object());
    return 0;
  }

  if (!preset_flag.empty() || h == 0) {
    const bra::ModelSpec spec = model_from(opts, preset_flag);
    const std::int64_t params = bra::param_count(spec);
    const std::int64_t flops = bra::flops_model(spec, res, res);
    std::printf("%-12s %10s %14s\n", "model", "params", "flops");
    std::printf("%-12s %10lld %14lld\n", spec.name.c_str(), static_cast<long long>(params),
                static_cast<long long>(flops));
    json stages = json::array();
    for (std::int64_t i = 0; i < spec.stages(); ++i) {
      const std::int64_t hs = spec.stage_extent(res, i);
      const bra::FlopsBreakdown fb =
          bra::flops_bra(hs, hs, spec.stage_channels(i),
                         spec.stage_partition[static_cast<std::size_t>(i)],
                         spec.stage_topk[static_cast<std::size_t>(i)]);
      csv_rows.push_back({hs * hs, spec.stage_partition[static_cast<std::size_t>(i)],
                          spec.stage_topk[static_cast<std::size_t>(i)], fb.proj, fb.routing,
                          fb.attn, fb.total});
      stages.push_back({{"stage", i}, {"proj", fb.proj}, {"routing", fb.routing},
                        {"attn", fb.attn}, {"total", fb.total}});
    }
    metrics["model"] = spec.name;
    metrics["res"] = res;
    metrics["params"] = params;
    metrics["flops"] = flops;
    metrics["stage_bra"] = stages;
    write_flops_csv(csv_path, csv_rows);
    write_report(opts, "flops", metrics, json::object());
    return 0;
  }

  const bra::FlopsBreakdown fb = bra::flops_bra(h, w, c, s, k);
  const bra::ComparatorCosts cmp = bra::flops_comparators(h, w, c);
  std::printf("%-8s %-8s %-8s %-8s\n", "proj", "routing", "attn", "total");
  std::printf("%-8lld %-8lld %-8lld %-8lld\n", static_cast<long long>(fb.proj),
              static_cast<long long>(fb.routing), static_cast<long long>(fb.attn),
              static_cast<long long>(fb.total));
  std::printf("comparators: vanilla %lld, axial %lld, window(%lld) %lld\n",
              static_cast<long long>(cmp.vanilla), static_cast<long long>(cmp.axial),
              static_cast<long long>(s), static_cast<long long>(bra::flops_window_attn(h, w, c, s)));
  metrics = {{"H", h},       {"W", w},           {"C", c},
             {"S", s},       {"k", k},           {"proj", fb.proj},
             {"routing", fb.routing}, {"attn", fb.attn}, {"total", fb.total},
             {"vanilla", cmp.vanilla}, {"axial", cmp.axial},
             {"S_star", bra::optimal_partition(static_cast<double>(h), static_cast<double>(w),
                                               static_cast<double>(k))},
             {"lower_bound", bra::flops_lower_bound(static_cast<double>(h),
                                                    static_cast<double>(w),
                                                    static_cast<double>(c),
                                                    static_cast<double>(k))}};
  csv_rows.push_back({h * w, s, k, fb.proj, fb.routing, fb.attn, fb.total});
  write_flops_csv(csv_path, csv_rows);
  write_report(opts, "flops", metrics, json::object());
  return 0;
}

// ---- bench ---------------------------------------------------------------

double quantile(std::vector<double> sorted, double p) {
  const double idx = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

int run_bench(Options& opts, const std::string& preset_flag, std::int64_t res, std::int64_t iters,
              std::int64_t warmup) {
  bra::ModelSpec spec = model_from(opts, preset_flag);
  if (opts.config.contains("bench")) {
    const json& b = opts.config.at("bench");
    if (res == 0) res = b.value("res", std::int64_t{224});
    if (iters == 0) iters = b.value("iters", std::int64_t{2});
    if (warmup < 0) warmup = b.value("warmup", std::int64_t{1});
  }
  if (res == 0) res = 224;
  if (iters == 0) iters = 2;
  if (warmup < 0) warmup = 1;
  spec.validate();

  const auto start = std::chrono::steady_clock::now();
  const bra::ModelParams<float> params = bra::init_params<float>(spec, opts.seed);
  std::mt19937_64 img_rng(opts.seed + 1);
  const bra::Tensor<float> image =
      bra::random_uniform<float>({res, res, 3}, img_rng, 0.0f, 1.0f);

  auto fingerprint = [&]() {
    const bra::Tensor<float> logits = bra::model_forward(image, spec, params);
    double sum = 0.0;
    for (std::int64_t i = 0; i < logits.size(); ++i) sum += static_cast<double>(logits[i]);
    return sum;
  };

  for (std::int64_t i = 0; i < warmup; ++i) fingerprint();

  std::vector<double> runs;
  double fp0 = 0.0;
  for (std::int64_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const double fp = fingerprint();
    runs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (i == 0) {
      fp0 = fp;
    } else if (fp != fp0) {
      std::fprintf(stderr, "bench: fingerprint drifted across iterations (%.17g vs %.17g)\n", fp,
                   fp0);
      return 1;
    }
  }
  std::vector<double> sorted = runs;
  std::sort(sorted.begin(), sorted.end());
  const double median = quantile(sorted, 0.5);
  const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::printf("model %s  res %lld  iters %lld  median %.4f s/img  iqr %.4f s  fingerprint %.17g\n",
              spec.name.c_str(), static_cast<long long>(res), static_cast<long long>(iters),
              median, iqr, fp0);
  write_report(opts, "bench",
               json{{"model", spec.name},
                    {"res", res},
                    {"iters", iters},
                    {"warmup", warmup},
                    {"fingerprint", fp0}},
               json{{"wall_seconds", wall},
                    {"median_seconds", median},
                    {"iqr_seconds", iqr},
                    {"runs", runs}});
  return 0;
}

// ---- route ---------------------------------------------------------------

int run_route(Options& opts, const std::string& preset_flag, const std::string& input,
              std::int64_t x, std::int64_t y, std::int64_t stage, std::int64_t block,
              const std::string& weights) {
  bra::ModelSpec spec;
  bra::ModelParams<float> params;
  if (!weights.empty()) {
    auto loaded = bra::load_params<float>(weights);
    spec = loaded.first;
    params = std::move(loaded.second);
  } else {
    spec = model_from(opts, preset_flag);
    spec.validate();
    params = bra::init_params<float>(spec, opts.seed);
  }
  const bra::Tensor<float> image = bra::read_image(input);

  if (stage < 0) stage = std::min<std::int64_t>(2, spec.stages() - 1);
  if (block < 0) block = spec.blocks_per_stage[static_cast<std::size_t>(stage)] - 1;
  const bra::RouteProbe probe{stage, block, x, y};
  bra::RoutingReport report;
  bra::model_forward(image, spec, params, &probe, &report);

  const std::int64_t hs = spec.stage_extent(image.extent(0), stage);
  const std::int64_t ws = spec.stage_extent(image.extent(1), stage);
  std::filesystem::create_directories(opts.out_dir);
  const auto json_path = std::filesystem::path(opts.out_dir) / "routing.json";
  const auto pgm_path = std::filesystem::path(opts.out_dir) / "heatmap.pgm";

  json routing = {{"query_position", {report.query_x, report.query_y}},
                  {"region_index", report.region_index},
                  {"routed_regions", report.routed_regions},
                  {"attention_row", report.attention_row},
                  {"stage", stage},
                  {"block", block},
                  {"map_height", hs},
                  {"map_width", ws}};
  std::ofstream jout(json_path);
  if (!jout) throw bra::io_error("cannot write " + json_path.string());
  jout << routing.dump(2) << "\n";
  bra::write_pgm(pgm_path.string(), report.heatmap);

  std::printf("stage %lld block %lld query (%lld, %lld) region %lld -> %zu routed regions\n",
              static_cast<long long>(stage), static_cast<long long>(block),
              static_cast<long long>(x), static_cast<long long>(y),
              static_cast<long long>(report.region_index), report.routed_regions.size());
  std::printf("wrote %s and %s\n", json_path.string().c_str(), pgm_path.string().c_str());
  write_report(opts, "route",
               json{{"stage", stage},
                    {"block", block},
                    {"region_index", report.region_index},
                    {"routed_regions", report.routed_regions}},
               json::object());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bi-level routing attention harness"};
  app.require_subcommand(1);

  Options opts;
  app.add_option("--config", opts.config_path, "JSON config file");
  app.add_option("--out", opts.out_dir, "output directory for reports");
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "seed (overrides BRA_SEED and config)");

  auto* check_cmd = app.add_subcommand("check", "run the verification suites");

  auto* flops_cmd = app.add_subcommand("flops", "analytic cost model reports");
  std::string flops_model_name;
  std::int64_t f_res = 224, f_h = 0, f_w = 0, f_c = 64, f_s = 0, f_k = 4;
  bool f_scaling = false;
  flops_cmd->add_option("--model", flops_model_name, "preset name");
  flops_cmd->add_option("--res", f_res, "input resolution for --model");
  flops_cmd->add_option("--H", f_h);
  flops_cmd->add_option("--W", f_w);
  flops_cmd->add_option("--C", f_c);
  flops_cmd->add_option("--S", f_s);
  flops_cmd->add_option("--k", f_k);
  flops_cmd->add_flag("--scaling", f_scaling, "complexity scaling sweep");

  auto* bench_cmd = app.add_subcommand("bench", "deterministic forward-pass timing");
  std::string bench_model_name;
  std::int64_t b_res = 0, b_iters = 0, b_warmup = -1;
  bench_cmd->add_option("--model", bench_model_name, "preset name");
  bench_cmd->add_option("--res", b_res, "input resolution");
  bench_cmd->add_option("--iters", b_iters, "timed iterations");
  bench_cmd->add_option("--warmup", b_warmup, "warmup iterations");

  auto* route_cmd = app.add_subcommand("route", "export routing and attention for one query");
  std::string route_model_name, route_input, route_weights;
  std::int64_t r_x = 0, r_y = 0, r_stage = -1, r_block = -1;
  route_cmd->add_option("--model", route_model_name, "preset name");
  route_cmd->add_option("--input", route_input, "input image (PPM/PGM or tensor container)")
      ->required();
  route_cmd->add_option("--x", r_x, "query column on the stage feature map")->required();
  route_cmd->add_option("--y", r_y, "query row on the stage feature map")->required();
  route_cmd->add_option("--stage", r_stage, "stage index (default: third stage)");
  route_cmd->add_option("--block", r_block, "block index in the stage (default: last)");
  route_cmd->add_option("--weights", route_weights, "parameter directory saved by the library");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!opts.config_path.empty()) {
      std::ifstream in(opts.config_path);
      if (!in) throw bra::io_error("cannot open config " + opts.config_path);
      opts.config = json::parse(in);
    }
    if (seed_opt->count() > 0) opts.seed_flag = seed_value;
    opts.seed = resolve_seed(opts);

    if (check_cmd->parsed()) return run_check(opts);
    if (flops_cmd->parsed()) {
      return run_flops(opts, flops_model_name, f_res, f_h, f_w, f_c, f_s, f_k, f_scaling);
    }
    if (bench_cmd->parsed()) return run_bench(opts, bench_model_name, b_res, b_iters, b_warmup);
    if (route_cmd->parsed()) {
      return run_route(opts, route_model_name, route_input, r_x, r_y, r_stage, r_block,
                       route_weights);
    }
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const bra::configuration_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const bra::argument_error& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 2;
  } catch (const bra::io_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
