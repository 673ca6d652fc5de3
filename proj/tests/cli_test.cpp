// Spawns the CLI binary and checks its contracts: exit codes, report files,
// and output formats. Usage: cli_test <path-to-cli> <path-to-default-config>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "bra/image.hpp"
#include "bra/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_failures = 0;

#define EXPECT(cond)                                                          \
  do {                                                                        \
    if (!(cond)) {                                                            \
      std::cerr << "FAIL " << __FILE__ << ":" << __LINE__ << "  " << #cond << "\n"; \
      ++g_failures;                                                           \
    }                                                                         \
  } while (0)

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& cmd) {
  RunResult result;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) {
    std::cerr << "popen failed for: " << cmd << "\n";
    ++g_failures;
    return result;
  }
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) {
    result.output.append(buf.data(), n);
  }
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "missing " << path << "\n";
    ++g_failures;
    return json::object();
  }
  return json::parse(in);
}

std::string canonical_report(json report) {
  report.erase("timing");
  return report.dump(2);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: cli_test <cli> <default-config>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const std::string default_config = argv[2];
  const fs::path work = fs::temp_directory_path() / "bra_cli_test";
  fs::remove_all(work);
  fs::create_directories(work);

  // A small custom model config shared by bench/route cases.
  const json mini_model = {{"name", "mini"},
                           {"base_channels", 32},
                           {"blocks_per_stage", {1, 1}},
                           {"mlp_ratio", 3},
                           {"stage_topk", {2, 4}},
                           {"stage_partition", {2, 2}},
                           {"num_classes", 8}};
  json mini_config = {{"model", mini_model}, {"bench", {{"res", 32}, {"iters", 2}, {"warmup", 1}}}};
  {
    std::ofstream out(work / "mini.json");
    out << mini_config.dump(2);
  }

  // --- check: shipped config passes -------------------------------------
  {
    auto r = run(cli + " --config " + default_config + " --out " + (work / "check").string() +
                 " check");
    EXPECT(r.exit_code == 0);
    EXPECT(r.output.find("oracle-equivalence") != std::string::npos);
    EXPECT(fs::exists(work / "check" / "report_check.json"));
  }

  // --- check: invalid config (k > S^2) exits 2 naming the invariant ------
  {
    json bad = load_json(default_config);
    bad["bra"]["k"] = 9;  // S = 2
    std::ofstream(work / "bad.json") << bad.dump();
    auto r = run(cli + " --config " + (work / "bad.json").string() + " check");
    EXPECT(r.exit_code == 2);
    EXPECT(r.output.find("k <= S^2") != std::string::npos);
  }

  // --- check: tampered fixture exits 1 naming the failing check ----------
  {
    json tampered = load_json(default_config);
    tampered["check"]["fixture"]["total"] = 11393;
    std::ofstream(work / "tampered.json") << tampered.dump();
    auto r = run(cli + " --config " + (work / "tampered.json").string() + " --out " +
                 (work / "tampered").string() + " check");
    EXPECT(r.exit_code == 1);
    EXPECT(r.output.find("eq8-accounting") != std::string::npos);
  }

  // --- flops: breakdown of the derived case ------------------------------
  {
    auto r = run(cli + " --out " + (work / "flops").string() +
                 " flops --H 8 --W 8 --C 4 --S 2 --k 1");
    EXPECT(r.exit_code == 0);
    EXPECT(r.output.find("11392") != std::string::npos);
    json report = load_json(work / "flops" / "report_flops.json");
    EXPECT(report["metrics"]["total"] == 11392);
    std::ifstream csv(work / "flops" / "flops.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    EXPECT(header == "HW,S,k,proj,routing,attn,total");
    EXPECT(row == "64,2,1,3072,128,8192,11392");
  }

  // --- flops: model presets against the published table ------------------
  {
    auto r = run(cli + " --out " + (work / "flops_t").string() +
                 " flops --model biformer-t --res 224");
    EXPECT(r.exit_code == 0);
    json report = load_json(work / "flops_t" / "report_flops.json");
    const double params = report["metrics"]["params"].get<double>();
    const double flops = report["metrics"]["flops"].get<double>();
    EXPECT(std::fabs(params - 13e6) / 13e6 < 0.10);
    EXPECT(std::fabs(flops - 2.2e9) / 2.2e9 < 0.15);
  }

  // --- flops: scaling sweep ----------------------------------------------
  {
    auto r = run(cli + " --out " + (work / "scaling").string() + " flops --scaling --k 4");
    EXPECT(r.exit_code == 0);
    json report = load_json(work / "scaling" / "report_flops.json");
    const double slope = report["metrics"]["slope"].get<double>();
    const double frozen = report["metrics"]["slope_frozen"].get<double>();
    EXPECT(slope > 4.0 / 3.0 - 0.1);
    EXPECT(slope < 4.0 / 3.0 + 0.1);
    EXPECT(frozen > 1.8);
    EXPECT(fs::exists(work / "scaling" / "scaling.csv"));
  }

  // --- bench: canonical reports identical across runs with one seed ------
  {
    const std::string base = cli + " --config " + (work / "mini.json").string() + " --seed 5";
    auto r1 = run(base + " --out " + (work / "bench1").string() + " bench");
    auto r2 = run(base + " --out " + (work / "bench2").string() + " bench");
    EXPECT(r1.exit_code == 0);
    EXPECT(r2.exit_code == 0);
    json a = load_json(work / "bench1" / "report_bench.json");
    json b = load_json(work / "bench2" / "report_bench.json");
    EXPECT(canonical_report(a) == canonical_report(b));
    EXPECT(a["metrics"]["fingerprint"] == b["metrics"]["fingerprint"]);
    // A different seed changes the fingerprint.
    auto r3 = run(cli + " --config " + (work / "mini.json").string() + " --seed 6 --out " +
                  (work / "bench3").string() + " bench");
    EXPECT(r3.exit_code == 0);
    json c = load_json(work / "bench3" / "report_bench.json");
    EXPECT(a["metrics"]["fingerprint"] != c["metrics"]["fingerprint"]);
    // BRA_SEED env drives the default seed.
    auto r4 = run("BRA_SEED=5 " + cli + " --config " + (work / "mini.json").string() +
                  " --out " + (work / "bench4").string() + " bench");
    EXPECT(r4.exit_code == 0);
    json d = load_json(work / "bench4" / "report_bench.json");
    EXPECT(a["metrics"]["fingerprint"] == d["metrics"]["fingerprint"]);
  }

  // --- route: JSON and heatmap contracts ----------------------------------
  {
    // 32x32 gradient test image.
    bra::Tensor<float> img({32, 32, 3});
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t x = 0; x < 32; ++x)
        for (std::int64_t c = 0; c < 3; ++c)
          img(y, x, c) = static_cast<float>((x + y + c) % 32) / 31.0f;
    std::ofstream ppm(work / "input.ppm", std::ios::binary);
    ppm << "P6\n32 32\n255\n";
    for (std::int64_t i = 0; i < img.size(); ++i)
      ppm.put(static_cast<char>(static_cast<unsigned char>(std::lround(img[i] * 255.0f))));
    ppm.close();

    auto r = run(cli + " --config " + (work / "mini.json").string() + " --out " +
                 (work / "route").string() +
                 " route --input " + (work / "input.ppm").string() +
                 " --x 3 --y 2 --stage 0 --block 0");
    EXPECT(r.exit_code == 0);
    json routing = load_json(work / "route" / "routing.json");
    EXPECT(routing["routed_regions"].size() == 2);  // stage-0 topk
    EXPECT(routing["map_height"] == 8);
    EXPECT(routing["query_position"][0] == 3);
    double sum = 0.0;
    for (const auto& v : routing["attention_row"]) sum += v.get<double>();
    EXPECT(std::fabs(sum - 1.0) < 1e-6);
    EXPECT(fs::exists(work / "route" / "heatmap.pgm"));
    bra::Tensor<float> heat = bra::read_image((work / "route" / "heatmap.pgm").string());
    EXPECT(heat.extent(0) == 8);
    EXPECT(heat.extent(1) == 8);

    // Stage 1 has k = S^2: every region is routed.
    auto r2 = run(cli + " --config " + (work / "mini.json").string() + " --out " +
                  (work / "route_full").string() +
                  " route --input " + (work / "input.ppm").string() +
                  " --x 0 --y 0 --stage 1 --block 0");
    EXPECT(r2.exit_code == 0);
    json full = load_json(work / "route_full" / "routing.json");
    EXPECT(full["routed_regions"].size() == 4);

    // Out-of-range query position is a usage error.
    auto r3 = run(cli + " --config " + (work / "mini.json").string() +
                  " route --input " + (work / "input.ppm").string() +
                  " --x 64 --y 0 --stage 0 --block 0");
    EXPECT(r3.exit_code == 2);
  }

  // --- usage errors -------------------------------------------------------
  {
    EXPECT(run(cli + " frobnicate").exit_code == 2);
    EXPECT(run(cli + " --config /nonexistent.json check").exit_code == 2);
    EXPECT(run(cli + " flops --model no-such-model").exit_code == 2);
  }

  if (g_failures == 0) {
    std::cout << "cli_test: all checks passed\n";
    return 0;
  }
  std::cout << "cli_test: " << g_failures << " failures\n";
  return 1;
}
