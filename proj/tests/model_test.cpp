#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "bra/model.hpp"
#include "oracles.hpp"

using namespace bra;

namespace {

// Single-stage miniature: 32x32 input, 32 channels, 2 blocks.
ModelSpec miniature() {
  ModelSpec spec;
  spec.name = "mini";
  spec.base_channels = 32;
  spec.blocks_per_stage = {2};
  spec.stage_partition = {2};
  spec.stage_topk = {2};
  spec.num_classes = 4;
  return spec;
}

}  // namespace

TEST_CASE("presets carry the published depth, width and schedules") {
  const ModelSpec t = preset("biformer-t");
  CHECK(t.base_channels == 64);
  CHECK(t.blocks_per_stage == std::vector<std::int64_t>{2, 2, 8, 2});
  CHECK(t.stage_partition == std::vector<std::int64_t>{7, 7, 7, 7});
  CHECK(t.stage_topk == std::vector<std::int64_t>{1, 4, 16, 49});
  CHECK(t.mlp_ratio == 3);
  // The last stage runs full attention: k = S^2.
  CHECK(t.stage_topk.back() == 49);
  CHECK(t.stage_partition.back() * t.stage_partition.back() == 49);

  CHECK(preset("biformer-s").blocks_per_stage == std::vector<std::int64_t>{4, 4, 18, 4});
  CHECK(preset("biformer-b").base_channels == 96);

  const ModelSpec abl = preset("abl-s8421");
  CHECK(abl.stage_partition == std::vector<std::int64_t>{8, 4, 2, 1});
  CHECK(abl.stage_topk == std::vector<std::int64_t>{2, 2, 2, 1});
  CHECK(preset("abl-k12832").stage_topk == std::vector<std::int64_t>{1, 2, 8, 32});
  CHECK(preset("abl-k283249").stage_topk == std::vector<std::int64_t>{2, 8, 32, 49});

  CHECK_THROWS_AS(preset("biformer-xxl"), argument_error);
  for (const auto& name : preset_names()) CHECK(preset(name).name == name);
}

TEST_CASE("spec validation and stage geometry") {
  ModelSpec bad = preset("biformer-t");
  bad.stage_topk[0] = 50;  // > 7^2
  CHECK_THROWS_AS(bad.validate(), configuration_error);

  ModelSpec odd = preset("biformer-t");
  odd.base_channels = 48;  // 48 % 32 != 0
  CHECK_THROWS_AS(odd.validate(), configuration_error);

  const ModelSpec t = preset("biformer-t");
  const std::int64_t extents[] = {56, 28, 14, 7};
  const std::int64_t channels[] = {64, 128, 256, 512};
  const std::int64_t heads[] = {2, 4, 8, 16};
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(t.stage_extent(224, i) == extents[i]);
    CHECK(t.stage_channels(i) == channels[i]);
    CHECK(t.stage_heads(i) == heads[i]);
  }
  // Every stage halves the previous map and doubles the channels.
  for (std::int64_t i = 1; i < 4; ++i) {
    CHECK(t.stage_extent(224, i) * 2 == t.stage_extent(224, i - 1));
    CHECK(t.stage_channels(i) == 2 * t.stage_channels(i - 1));
  }
}

TEST_CASE("spec JSON round trip and preset references") {
  const ModelSpec t = preset("abl-s8421");
  const ModelSpec back = model_spec_from_json(to_json(t));
  CHECK(back.base_channels == t.base_channels);
  CHECK(back.blocks_per_stage == t.blocks_per_stage);
  CHECK(back.stage_topk == t.stage_topk);
  CHECK(back.stage_partition == t.stage_partition);

  const ModelSpec by_name = model_spec_from_json({{"preset", "biformer-s"}});
  CHECK(by_name.name == "biformer-s");
}

TEST_CASE("manifest, closed-form count, and initialized tensors agree") {
  for (const char* name : {"mini", "biformer-t"}) {
    const ModelSpec spec = std::string(name) == "mini" ? miniature() : preset(name);
    const auto layers = layer_manifest(spec);
    std::set<std::string> names;
    std::int64_t manifest_sum = 0;
    for (const auto& l : layers) {
      CHECK(names.insert(l.name).second);  // unique
      manifest_sum += l.params;
    }
    CHECK(manifest_sum == param_count(spec));
    const ModelParams<float> params = init_params<float>(spec, 0);
    CHECK(param_element_count(params) == param_count(spec));
  }
}

TEST_CASE("init_params is seed-deterministic with the documented moments") {
  const ModelSpec spec = miniature();
  const ModelParams<double> a = init_params<double>(spec, 42);
  const ModelParams<double> b = init_params<double>(spec, 42);
  const ModelParams<double> c = init_params<double>(spec, 43);
  bool all_equal = true, any_diff = false;
  const auto la = params_to_list(a), lb = params_to_list(b), lc = params_to_list(c);
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (!(la[i] == lb[i])) all_equal = false;
    if (!(la[i] == lc[i])) any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);

  // Empirical std of a large weight matrix: normal std 0.02 truncated at two
  // sigma concentrates near 0.0176.
  const ModelSpec big = preset("biformer-t");
  const ModelParams<double> p = init_params<double>(big, 7);
  const Tensor<double>& w = p.stages[3].blocks[0].bra.wq;  // 512 x 512
  double mean = 0.0, var = 0.0;
  for (std::int64_t i = 0; i < w.size(); ++i) mean += w[i];
  mean /= static_cast<double>(w.size());
  for (std::int64_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
  const double stddev = std::sqrt(var / static_cast<double>(w.size()));
  CHECK(stddev > 0.02 * 0.8);
  CHECK(stddev < 0.02 * 1.2);
  // Biases zero, gains one.
  CHECK(p.head_bias == Tensor<double>({big.num_classes}));
  CHECK(p.head_norm_gain == Tensor<double>::full({512}, 1.0));
}

TEST_CASE("biformer_block: zero branches give an identity map") {
  const std::int64_t h = 8, w = 8, c = 32;
  BraConfig cfg{2, 2, 1, c, 5};
  BlockParamsT<Tensor<double>> p;
  p.pos_kernel = Tensor<double>({3, 3, c});
  p.norm1_gain = Tensor<double>::full({c}, 1.0);
  p.norm1_bias = Tensor<double>({c});
  p.bra = BraParamsT<Tensor<double>>{Tensor<double>({c, c}), Tensor<double>({c, c}),
                                     Tensor<double>({c, c}), Tensor<double>({c, c}),
                                     Tensor<double>({5, 5, c})};
  p.norm2_gain = Tensor<double>::full({c}, 1.0);
  p.norm2_bias = Tensor<double>({c});
  p.mlp_w1 = Tensor<double>({c, 3 * c});
  p.mlp_b1 = Tensor<double>({3 * c});
  p.mlp_w2 = Tensor<double>({3 * c, c});
  p.mlp_b2 = Tensor<double>({c});

  std::mt19937_64 rng(1);
  const Tensor<double> x = random_uniform<double>({h, w, c}, rng, -1.0, 1.0);
  CHECK(biformer_block(x, p, cfg) == x);
}

TEST_CASE("biformer_block preserves shape and survives large inputs") {
  const ModelSpec spec = miniature();
  const ModelParams<double> params = init_params<double>(spec, 3);
  const BraConfig cfg = spec.stage_bra(0);
  std::mt19937_64 rng(2);
  const Tensor<double> x = random_uniform<double>({8, 8, 32}, rng, -1.0, 1.0);
  const Tensor<double> y = biformer_block(x, params.stages[0].blocks[0], cfg);
  CHECK(y.shape() == x.shape());

  const Tensor<double> loud = scale(x, 100.0);
  const Tensor<double> out = biformer_block(loud, params.stages[0].blocks[0], cfg);
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(std::isfinite(out[i]));
}

TEST_CASE("blocks with k = S^2 equal the full-attention block") {
  const std::int64_t h = 4, w = 4, c = 64;
  BraConfig cfg{2, 4, 2, c, 5};
  ModelSpec spec;
  spec.base_channels = c;
  spec.blocks_per_stage = {1};
  spec.stage_partition = {2};
  spec.stage_topk = {4};
  spec.num_classes = 2;
  const ModelParams<double> params = init_params<double>(spec, 5);
  const BlockParamsT<Tensor<double>>& bp = params.stages[0].blocks[0];
  std::mt19937_64 rng(6);
  const Tensor<double> x = random_uniform<double>({h, w, c}, rng, -1.0, 1.0);

  const Tensor<double> routed = biformer_block(x, bp, cfg);

  // The same block with the routed-attention module swapped for full
  // attention plus the local term.
  Tensor<double> hpos = add(x, depthwise_conv2d(x, bp.pos_kernel));
  Tensor<double> normed = layer_norm(hpos, bp.norm1_gain, bp.norm1_bias, 1e-5);
  Tensor<double> flat = reshape(normed, {h * w, c});
  Tensor<double> q = matmul(flat, bp.bra.wq), k = matmul(flat, bp.bra.wk),
                 v = matmul(flat, bp.bra.wv);
  std::vector<Tensor<double>> heads;
  const std::int64_t ch = c / cfg.heads;
  for (std::int64_t i = 0; i < cfg.heads; ++i)
    heads.push_back(attention(slice_last(q, i * ch, ch), slice_last(k, i * ch, ch),
                              slice_last(v, i * ch, ch)));
  Tensor<double> att = concat_last(heads);
  Tensor<double> local = depthwise_conv2d(reshape(v, {h, w, c}), bp.bra.lce_kernel);
  Tensor<double> mixed =
      reshape(matmul(add(att, reshape(local, {h * w, c})), bp.bra.wo), {h, w, c});
  Tensor<double> h2 = add(hpos, mixed);
  Tensor<double> normed2 = layer_norm(h2, bp.norm2_gain, bp.norm2_bias, 1e-5);
  Tensor<double> m = gelu(add_bias(project_tokens(normed2, bp.mlp_w1), bp.mlp_b1));
  m = add_bias(project_tokens(m, bp.mlp_w2), bp.mlp_b2);
  const Tensor<double> full = add(h2, m);

  CHECK(oracle::max_abs_diff(routed, full) < 1e-10);
}

TEST_CASE("model_forward: miniature shape trace and num_classes = 1") {
  const ModelSpec spec = miniature();
  CHECK(spec.stage_extent(32, 0) == 8);
  const ModelParams<float> params = init_params<float>(spec, 0);
  std::mt19937_64 rng(4);
  const Tensor<float> image = random_uniform<float>({32, 32, 3}, rng, 0.0f, 1.0f);
  const Tensor<float> logits = model_forward(image, spec, params);
  CHECK(logits.shape() == Shape{4});

  ModelSpec scalar_spec = spec;
  scalar_spec.num_classes = 1;
  const ModelParams<float> sp = init_params<float>(scalar_spec, 0);
  CHECK(model_forward(image, scalar_spec, sp).shape() == Shape{1});
}

TEST_CASE("model_forward: four-stage custom model runs and is deterministic") {
  ModelSpec spec;
  spec.base_channels = 32;
  spec.blocks_per_stage = {1, 1, 1, 1};
  spec.stage_partition = {2, 2, 2, 2};
  spec.stage_topk = {1, 2, 4, 4};
  spec.num_classes = 10;
  const ModelParams<float> params = init_params<float>(spec, 9);
  std::mt19937_64 rng(5);
  const Tensor<float> image = random_uniform<float>({64, 64, 3}, rng, 0.0f, 1.0f);
  const Tensor<float> a = model_forward(image, spec, params);
  const Tensor<float> b = model_forward(image, spec, params);
  CHECK(a == b);
  CHECK(a.shape() == Shape{10});
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(std::isfinite(a[i]));

  // Same seed rebuilds the same parameters; a different seed does not.
  const ModelParams<float> again = init_params<float>(spec, 9);
  CHECK(model_forward(image, spec, again) == a);

  CHECK_THROWS_AS(model_forward(random_uniform<float>({60, 64, 3}, rng, 0.f, 1.f), spec, params),
                  configuration_error);
  CHECK_THROWS_AS(model_forward(random_uniform<float>({64, 64, 1}, rng, 0.f, 1.f), spec, params),
                  dimension_error);
}

TEST_CASE("model_forward captures routing at the probed block") {
  const ModelSpec spec = miniature();
  const ModelParams<float> params = init_params<float>(spec, 1);
  std::mt19937_64 rng(6);
  const Tensor<float> image = random_uniform<float>({32, 32, 3}, rng, 0.0f, 1.0f);
  const RouteProbe probe{0, 1, 3, 5};
  RoutingReport report;
  model_forward(image, spec, params, &probe, &report);
  CHECK(report.routed_regions.size() == 2);  // stage topk
  CHECK(report.heatmap.shape() == Shape{8, 8});
  CHECK(report.query_x == 3);
  CHECK(report.query_y == 5);
  double sum = 0.0;
  for (double v : report.attention_row) sum += v;
  CHECK(std::fabs(sum - 1.0) < 1e-6);

  const RouteProbe bad{0, 7, 0, 0};
  RoutingReport unused;
  CHECK_THROWS_AS(model_forward(image, spec, params, &bad, &unused), argument_error);
}

TEST_CASE("parameters round trip through the directory format") {
  const ModelSpec spec = miniature();
  const ModelParams<float> params = init_params<float>(spec, 11);
  const auto dir = std::filesystem::temp_directory_path() / "bra_model_io_test";
  std::filesystem::remove_all(dir);
  save_params(dir, spec, params);
  auto [loaded_spec, loaded] = load_params<float>(dir);
  CHECK(loaded_spec.base_channels == spec.base_channels);
  const auto a = params_to_list(params), b = params_to_list(loaded);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  std::filesystem::remove_all(dir);
}
