#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bra/bra.hpp"
#include "bra/model_spec.hpp"
#include "bra/random.hpp"
#include "bra/serialize.hpp"

namespace bra {

template <typename V>
struct BlockParamsT {
  V pos_kernel;               // (3, 3, C) depthwise position encoding
  V norm1_gain, norm1_bias;   // (C)
  BraParamsT<V> bra;
  V norm2_gain, norm2_bias;   // (C)
  V mlp_w1, mlp_b1;           // (C, eC), (eC)
  V mlp_w2, mlp_b2;           // (eC, C), (C)
};

template <typename V>
struct StageParamsT {
  V embed_kernel;  // (ks, ks, Cin, C)
  V embed_bias;    // (C)
  std::vector<BlockParamsT<V>> blocks;
};

template <typename V>
struct ModelParamsT {
  std::vector<StageParamsT<V>> stages;
  V head_norm_gain, head_norm_bias;  // (C_last)
  V head_weight;                     // (C_last, num_classes)
  V head_bias;                       // (num_classes)
};

template <typename T>
using ModelParams = ModelParamsT<Tensor<T>>;

enum class ParamKind { weight, bias, gain };

/// Visit every parameter in the canonical manifest order.
template <typename P, typename Fn>
void for_each_param(P& params, Fn&& fn) {
  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    const std::string stage = "stage" + std::to_string(i);
    auto& sp = params.stages[i];
    fn(stage + ".embed.kernel", sp.embed_kernel, ParamKind::weight);
    fn(stage + ".embed.bias", sp.embed_bias, ParamKind::bias);
    for (std::size_t b = 0; b < sp.blocks.size(); ++b) {
      const std::string block = stage + ".block" + std::to_string(b);
      auto& bp = sp.blocks[b];
      fn(block + ".pos.kernel", bp.pos_kernel, ParamKind::weight);
      fn(block + ".norm1.gain", bp.norm1_gain, ParamKind::gain);
      fn(block + ".norm1.bias", bp.norm1_bias, ParamKind::bias);
      fn(block + ".bra.wq", bp.bra.wq, ParamKind::weight);
      fn(block + ".bra.wk", bp.bra.wk, ParamKind::weight);
      fn(block + ".bra.wv", bp.bra.wv, ParamKind::weight);
      fn(block + ".bra.wo", bp.bra.wo, ParamKind::weight);
      fn(block + ".bra.lce", bp.bra.lce_kernel, ParamKind::weight);
      fn(block + ".norm2.gain", bp.norm2_gain, ParamKind::gain);
      fn(block + ".norm2.bias", bp.norm2_bias, ParamKind::bias);
      fn(block + ".mlp.w1", bp.mlp_w1, ParamKind::weight);
      fn(block + ".mlp.b1", bp.mlp_b1, ParamKind::bias);
      fn(block + ".mlp.w2", bp.mlp_w2, ParamKind::weight);
      fn(block + ".mlp.b2", bp.mlp_b2, ParamKind::bias);
    }
  }
  fn("head.norm.gain", params.head_norm_gain, ParamKind::gain);
  fn("head.norm.bias", params.head_norm_bias, ParamKind::bias);
  fn("head.weight", params.head_weight, ParamKind::weight);
  fn("head.bias", params.head_bias, ParamKind::bias);
}

template <typename V>
ModelParamsT<V> make_structure(const ModelSpec& spec) {
  ModelParamsT<V> p;
  p.stages.resize(static_cast<std::size_t>(spec.stages()));
  for (std::int64_t i = 0; i < spec.stages(); ++i) {
    p.stages[static_cast<std::size_t>(i)].blocks.resize(
        static_cast<std::size_t>(spec.blocks_per_stage[static_cast<std::size_t>(i)]));
  }
  return p;
}

/// Zero parameters with the manifest's shapes; traversal order and the
/// manifest are cross-checked while filling.
template <typename T>
ModelParams<T> make_params(const ModelSpec& spec) {
  const std::vector<LayerInfo> layers = layer_manifest(spec);
  ModelParams<T> p = make_structure<Tensor<T>>(spec);
  std::size_t i = 0;
  for_each_param(p, [&](const std::string& name, Tensor<T>& slot, ParamKind) {
    if (i >= layers.size() || layers[i].name != name) {
      throw evaluation_error("parameter traversal diverged from the manifest at '" + name + "'");
    }
    slot = Tensor<T>(layers[i].shape);
    ++i;
  });
  if (i != layers.size()) {
    throw evaluation_error("parameter traversal visited " + std::to_string(i) + " of " +
                           std::to_string(layers.size()) + " manifest entries");
  }
  return p;
}

/// Seeded initialization: truncated-normal (std 0.02, cut at 2 sigma)
/// weights, zero biases, unit norm gains. Fully determined by the seed.
template <typename T>
ModelParams<T> init_params(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams<T> p = make_params<T>(spec);
  std::mt19937_64 rng(seed);
  for_each_param(p, [&rng](const std::string&, Tensor<T>& t, ParamKind kind) {
    switch (kind) {
      case ParamKind::weight:
        fill_trunc_normal(t, rng, 0.02);
        break;
      case ParamKind::bias:
        break;  // already zero
      case ParamKind::gain:
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = T(1);
        break;
    }
  });
  return p;
}

template <typename T>
std::int64_t param_element_count(const ModelParams<T>& params) {
  std::int64_t total = 0;
  for_each_param(params, [&total](const std::string&, const Tensor<T>& t, ParamKind) {
    total += t.size();
  });
  return total;
}

/// Rebuild a parameter set (of tensors or tape vars) from a flat list in
/// manifest order.
template <typename V>
ModelParamsT<V> params_from_list(const ModelSpec& spec, std::span<const V> flat) {
  ModelParamsT<V> p = make_structure<V>(spec);
  std::size_t i = 0;
  for_each_param(p, [&](const std::string&, V& slot, ParamKind) {
    if (i >= flat.size()) throw argument_error("params_from_list: too few tensors");
    slot = flat[i++];
  });
  if (i != flat.size()) throw argument_error("params_from_list: too many tensors");
  return p;
}

template <typename T>
std::vector<Tensor<T>> params_to_list(const ModelParams<T>& params) {
  std::vector<Tensor<T>> out;
  for_each_param(params, [&out](const std::string&, const Tensor<T>& t, ParamKind) {
    out.push_back(t);
  });
  return out;
}

struct QueryProbe {
  std::int64_t x = 0, y = 0;
};

/// BiFormer block: depthwise position encoding, routed attention and MLP,
/// each behind a pre-norm residual.
///   X <- X + DWConv3x3(X)
///   X <- X + BRA(LN(X))
///   X <- X + MLP(LN(X))
template <typename V>
V biformer_block(const V& x, const BlockParamsT<V>& p, const BraConfig& cfg,
                 const QueryProbe* probe = nullptr, RoutingReport* captured = nullptr) {
  using T = scalar_t<V>;
  const T eps = T(1e-5);
  V h = add(x, depthwise_conv2d(x, p.pos_kernel));
  V normed = layer_norm(h, p.norm1_gain, p.norm1_bias, eps);
  if (probe && captured) {
    BraParams<T> eager{value(p.bra.wq), value(p.bra.wk), value(p.bra.wv), value(p.bra.wo),
                       value(p.bra.lce_kernel)};
    *captured = export_routing(value(normed), cfg, eager, probe->x, probe->y);
  }
  h = add(h, bra_forward(normed, cfg, p.bra));
  V normed2 = layer_norm(h, p.norm2_gain, p.norm2_bias, eps);
  V m = gelu(add_bias(project_tokens(normed2, p.mlp_w1), p.mlp_b1));
  m = add_bias(project_tokens(m, p.mlp_w2), p.mlp_b2);
  return add(h, m);
}

struct RouteProbe {
  std::int64_t stage = 0, block = 0;
  std::int64_t x = 0, y = 0;  // position on that stage's feature map
};

/// Four-stage pyramid: overlapped patch embedding (stride 4), then patch
/// merging (stride 2, channel doubling) between stages, BiFormer blocks in
/// each, global average pool, norm and linear head.
template <typename V>
V model_forward(const V& image, const ModelSpec& spec, const ModelParamsT<V>& params,
                const RouteProbe* probe = nullptr, RoutingReport* captured = nullptr) {
  using T = scalar_t<V>;
  spec.validate();
  const auto& iv = value(image);
  if (iv.rank() != 3 || iv.extent(2) != 3) {
    throw dimension_error("model_forward: expected (H, W, 3), got " + shape_str(iv.shape()));
  }
  for (std::int64_t i = 0; i < spec.stages(); ++i) {
    spec.stage_extent(iv.extent(0), i);
    spec.stage_extent(iv.extent(1), i);
  }
  if (probe && (probe->stage < 0 || probe->stage >= spec.stages() || probe->block < 0 ||
                probe->block >= spec.blocks_per_stage[static_cast<std::size_t>(probe->stage)])) {
    throw argument_error("model_forward: probe stage/block out of range");
  }

  V x = image;
  for (std::int64_t i = 0; i < spec.stages(); ++i) {
    const auto& sp = params.stages[static_cast<std::size_t>(i)];
    x = add_bias(conv2d(x, sp.embed_kernel, spec.stage_stride(i), spec.embed_pad(i)),
                 sp.embed_bias);
    const BraConfig cfg = spec.stage_bra(i);
    for (std::int64_t b = 0; b < spec.blocks_per_stage[static_cast<std::size_t>(i)]; ++b) {
      const bool probed = probe && probe->stage == i && probe->block == b;
      const QueryProbe qp{probe ? probe->x : 0, probe ? probe->y : 0};
      x = biformer_block(x, sp.blocks[static_cast<std::size_t>(b)], cfg,
                         probed ? &qp : nullptr, probed ? captured : nullptr);
    }
  }

  const auto& xv = value(x);
  const std::int64_t c = xv.extent(2);
  V pooled = mean_axis(reshape(x, {xv.extent(0) * xv.extent(1), c}), 0);
  V normed = layer_norm(pooled, params.head_norm_gain, params.head_norm_bias, T(1e-5));
  V logits = add_bias(matmul(reshape(normed, {1, c}), params.head_weight), params.head_bias);
  return reshape(logits, {spec.num_classes});
}

/// Parameters serialize as a manifest (ordered layer names) plus one binary
/// tensor container per layer.
template <typename T>
void save_params(const std::filesystem::path& dir, const ModelSpec& spec,
                 const ModelParams<T>& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["model"] = to_json(spec);
  manifest["layers"] = nlohmann::json::array();
  std::size_t index = 0;
  for_each_param(params, [&](const std::string& name, const Tensor<T>& t, ParamKind) {
    char prefix[8];
    std::snprintf(prefix, sizeof(prefix), "%04zu", index++);
    const std::string file = std::string(prefix) + "_" + name + ".tnsr";
    write_tensor_file((dir / file).string(), t);
    manifest["layers"].push_back({{"name", name}, {"file", file}});
  });
  std::ofstream out(dir / "manifest.json");
  if (!out) throw io_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

template <typename T>
std::pair<ModelSpec, ModelParams<T>> load_params(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw io_error("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  const ModelSpec spec = model_spec_from_json(manifest.at("model"));
  ModelParams<T> params = make_params<T>(spec);
  std::size_t index = 0;
  const auto& layers = manifest.at("layers");
  for_each_param(params, [&](const std::string& name, Tensor<T>& t, ParamKind) {
    if (index >= layers.size() || layers[index].at("name").get<std::string>() != name) {
      throw io_error("manifest entry " + std::to_string(index) + " does not match layer '" +
                     name + "'");
    }
    Tensor<T> loaded =
        read_tensor_file<T>((dir / layers[index].at("file").get<std::string>()).string());
    if (loaded.shape() != t.shape()) {
      throw io_error("layer '" + name + "' has shape " + shape_str(loaded.shape()) +
                     ", expected " + shape_str(t.shape()));
    }
    t = std::move(loaded);
    ++index;
  });
  return {spec, std::move(params)};
}

}  // namespace bra
