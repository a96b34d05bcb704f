#include "causalmm/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>

#include "causalmm/error.hpp"
#include "causalmm/rng.hpp"
#include "json_util.hpp"

namespace causalmm {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v < 1) throw ConfigError(field, "must be >= 1");
  };
  positive(grid, "grid");
  positive(in_dim, "in_dim");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(vision_layers, "vision_layers");
  positive(decoder_layers, "decoder_layers");
  if (vocab < 3) throw ConfigError("vocab", "must be >= 3 (BOS, YES, NO are reserved)");
  if (d_model % heads != 0) throw ConfigError("d_model", "must be divisible by heads");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"grid", c.grid},
                     {"in_dim", c.in_dim},
                     {"d_model", c.d_model},
                     {"heads", c.heads},
                     {"vision_layers", c.vision_layers},
                     {"decoder_layers", c.decoder_layers},
                     {"vocab", c.vocab}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto read = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    out = detail::as_u64(j.at(key), key);
  };
  read("grid", c.grid);
  read("in_dim", c.in_dim);
  read("d_model", c.d_model);
  read("heads", c.heads);
  read("vision_layers", c.vision_layers);
  read("decoder_layers", c.decoder_layers);
  read("vocab", c.vocab);
}

namespace {

template <typename Weights, typename Fn>
void visit_tensors(Weights& w, Fn&& fn) {
  fn("patch_embed", w.patch_embed);
  fn("patch_bias", w.patch_bias);
  auto layers = [&](auto& list, const std::string& prefix) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      auto& l = list[i];
      const std::string p = prefix + "." + std::to_string(i) + ".";
      fn(p + "ln1_gain", l.ln1_gain);
      fn(p + "ln1_bias", l.ln1_bias);
      fn(p + "wq", l.wq);
      fn(p + "wk", l.wk);
      fn(p + "wv", l.wv);
      fn(p + "wo", l.wo);
      fn(p + "ln2_gain", l.ln2_gain);
      fn(p + "ln2_bias", l.ln2_bias);
      fn(p + "ff_in", l.ff_in);
      fn(p + "ff_out", l.ff_out);
    }
  };
  layers(w.vision, "vision");
  fn("vision_ln_gain", w.vision_ln_gain);
  fn("vision_ln_bias", w.vision_ln_bias);
  fn("projector", w.projector);
  fn("token_embed", w.token_embed);
  layers(w.decoder, "decoder");
  fn("final_ln_gain", w.final_ln_gain);
  fn("final_ln_bias", w.final_ln_bias);
  fn("lm_head", w.lm_head);
  fn("lm_head_bias", w.lm_head_bias);
}

Tensor normal_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = rng.normal() * scale;
  return t;
}

LayerWeights init_layer(SeededRng& rng, const ModelConfig& c, double scale) {
  const std::size_t d = c.d_model;
  LayerWeights l;
  l.ln1_gain = Tensor::filled({d}, 1.0);
  l.ln1_bias = Tensor::zeros({d});
  l.wq = normal_matrix(rng, d, d, scale);
  l.wk = normal_matrix(rng, d, d, scale);
  l.wv = normal_matrix(rng, d, d, scale);
  l.wo = normal_matrix(rng, d, d, scale);
  l.ln2_gain = Tensor::filled({d}, 1.0);
  l.ln2_bias = Tensor::zeros({d});
  l.ff_in = normal_matrix(rng, d, c.ff_dim(), scale);
  l.ff_out = normal_matrix(rng, c.ff_dim(), d, scale);
  return l;
}

void check_layer(const LayerWeights& l, const ModelConfig& c) {
  const std::size_t d = c.d_model;
  auto expect = [](const Tensor& t, const Shape& s, const char* what) {
    if (t.shape() != s) throw DimensionError(std::string("weight ") + what + " has wrong shape");
  };
  expect(l.ln1_gain, {d}, "ln1_gain");
  expect(l.ln1_bias, {d}, "ln1_bias");
  expect(l.wq, {d, d}, "wq");
  expect(l.wk, {d, d}, "wk");
  expect(l.wv, {d, d}, "wv");
  expect(l.wo, {d, d}, "wo");
  expect(l.ln2_gain, {d}, "ln2_gain");
  expect(l.ln2_bias, {d}, "ln2_bias");
  expect(l.ff_in, {d, c.ff_dim()}, "ff_in");
  expect(l.ff_out, {c.ff_dim(), d}, "ff_out");
}

HookKey key_for(Modality m, std::size_t layer, std::size_t head) { return HookKey{m, layer, head}; }

// Multi-head attention over the rows of x_norm; appends the maps actually
// used (natural or intervened) to `maps`.
Tensor attention(const LayerWeights& w, const Tensor& x_norm, const ModelConfig& c, bool causal,
                 Modality modality, std::size_t layer, const HookSet& hooks,
                 std::vector<AttentionMap>& maps) {
  const std::size_t n = x_norm.rows();
  const std::size_t hd = c.head_dim();
  const Tensor q = matmul(x_norm, w.wq);
  const Tensor k = matmul(x_norm, w.wk);
  const Tensor v = matmul(x_norm, w.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor mixed({n, c.d_model});
  for (std::size_t h = 0; h < c.heads; ++h) {
    const std::size_t off = h * hd;
    Tensor scores({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!in_support(causal, i, j)) {
          scores.at(i, j) = kMaskSentinel;
          continue;
        }
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += q.at(i, off + e) * k.at(j, off + e);
        scores.at(i, j) = s * scale;
      }
    }

    Tensor used;
    const CounterfactualFn* hook = hooks.find(key_for(modality, layer, h));
    if (hook == nullptr) {
      used = softmax_rows(scores);
    } else {
      AttentionMap natural{layer, h, Tensor{}, causal};
      natural.weights = hooks.stage() == AttentionStage::post_softmax ? softmax_rows(scores) : scores;
      Tensor raw = (*hook)(natural);
      if (raw.shape() != natural.weights.shape()) {
        throw DimensionError("counterfactual map shape differs from the natural map");
      }
      used = finalize_counterfactual(raw, causal, hooks.stage());
    }

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double a = used.at(i, j);
        if (a == 0.0) continue;
        for (std::size_t e = 0; e < hd; ++e) mixed.at(i, off + e) += a * v.at(j, off + e);
      }
    }
    maps.push_back(AttentionMap{layer, h, std::move(used), causal});
  }
  return matmul(mixed, w.wo);
}

Tensor block(const LayerWeights& w, const Tensor& x, const ModelConfig& c, bool causal, Modality modality,
             std::size_t layer, const HookSet& hooks, std::vector<AttentionMap>& maps) {
  Tensor h = add(x, attention(w, layer_norm(x, w.ln1_gain, w.ln1_bias), c, causal, modality, layer, hooks, maps));
  Tensor inner = matmul(layer_norm(h, w.ln2_gain, w.ln2_bias), w.ff_in);
  for (auto& v : inner.data()) v = v > 0.0 ? v : 0.0;
  return add(h, matmul(inner, w.ff_out));
}

void check_weights(const ModelWeights& w) {
  const ModelConfig& c = w.config;
  c.validate();
  if (w.vision.size() != c.vision_layers || w.decoder.size() != c.decoder_layers) {
    throw DimensionError("layer count does not match config");
  }
  for (const auto& l : w.vision) check_layer(l, c);
  for (const auto& l : w.decoder) check_layer(l, c);
  const std::size_t d = c.d_model;
  if (w.patch_embed.shape() != Shape{c.in_dim, d} || w.patch_bias.shape() != Shape{d} ||
      w.projector.shape() != Shape{d, d} || w.token_embed.shape() != Shape{c.vocab, d} ||
      w.lm_head.shape() != Shape{d, c.vocab} || w.lm_head_bias.shape() != Shape{c.vocab} ||
      w.vision_ln_gain.shape() != Shape{d} || w.final_ln_gain.shape() != Shape{d}) {
    throw DimensionError("weight shapes do not match config");
  }
}

}  // namespace

void for_each_tensor(ModelWeights& w, const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_tensors(w, fn);
}

void for_each_tensor(const ModelWeights& w,
                     const std::function<void(const std::string&, const Tensor&)>& fn) {
  visit_tensors(w, fn);
}

ModelWeights init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  SeededRng rng(seed);

  ModelWeights w;
  w.config = config;
  w.patch_embed = normal_matrix(rng, config.in_dim, d, scale);
  w.patch_bias = Tensor::zeros({d});
  for (std::size_t i = 0; i < config.vision_layers; ++i) w.vision.push_back(init_layer(rng, config, scale));
  w.vision_ln_gain = Tensor::filled({d}, 1.0);
  w.vision_ln_bias = Tensor::zeros({d});
  w.projector = normal_matrix(rng, d, d, scale);
  w.token_embed = normal_matrix(rng, config.vocab, d, scale);
  for (std::size_t i = 0; i < config.decoder_layers; ++i) w.decoder.push_back(init_layer(rng, config, scale));
  w.final_ln_gain = Tensor::filled({d}, 1.0);
  w.final_ln_bias = Tensor::zeros({d});
  w.lm_head = normal_matrix(rng, d, config.vocab, scale);
  w.lm_head_bias = Tensor::zeros({config.vocab});
  return w;
}

VisionOutput vision_encode(const ModelWeights& w, const Tensor& image, const HookSet& hooks) {
  const ModelConfig& c = w.config;
  if (image.rank() != 2 || image.rows() != c.visual_tokens() || image.cols() != c.in_dim) {
    throw DimensionError("image must be " + std::to_string(c.visual_tokens()) + " x " +
                         std::to_string(c.in_dim));
  }
  Tensor x = matmul(image, w.patch_embed);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < c.d_model; ++j) x.at(r, j) += w.patch_bias[j];
  }
  VisionOutput out;
  for (std::size_t l = 0; l < w.vision.size(); ++l) {
    x = block(w.vision[l], x, c, false, Modality::vision, l, hooks, out.maps);
  }
  out.tokens = matmul(layer_norm(x, w.vision_ln_gain, w.vision_ln_bias), w.projector);
  return out;
}

ForwardTrace decode_step(const ModelWeights& w, std::span<const TokenId> tokens, const Tensor& visual,
                         const HookSet& hooks) {
  const ModelConfig& c = w.config;
  if (tokens.empty()) throw InputError("decode_step requires a non-empty token sequence");
  if (visual.rank() != 2 || visual.cols() != c.d_model) throw DimensionError("visual tokens must be n x d_model");
  for (auto t : tokens) {
    if (t >= c.vocab) throw VocabError("token id " + std::to_string(t) + " outside vocab of " + std::to_string(c.vocab));
  }

  const std::size_t nv = visual.rows();
  Tensor x({nv + tokens.size(), c.d_model});
  for (std::size_t r = 0; r < nv; ++r) {
    std::copy(visual.row(r).begin(), visual.row(r).end(), x.row(r).begin());
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto src = w.token_embed.row(tokens[i]);
    std::copy(src.begin(), src.end(), x.row(nv + i).begin());
  }

  ForwardTrace trace;
  for (std::size_t l = 0; l < w.decoder.size(); ++l) {
    x = block(w.decoder[l], x, c, true, Modality::language, l, hooks, trace.decoder_maps);
  }
  Tensor last({1, c.d_model});
  auto last_row = x.row(x.rows() - 1);
  std::copy(last_row.begin(), last_row.end(), last.data().begin());
  Tensor logits = matmul(layer_norm(last, w.final_ln_gain, w.final_ln_bias), w.lm_head);
  trace.logits = Tensor({c.vocab}, std::vector<double>(logits.values()));
  for (std::size_t i = 0; i < c.vocab; ++i) trace.logits[i] += w.lm_head_bias[i];
  return trace;
}

ForwardTrace forward(const ModelWeights& w, const Tensor& image, std::span<const TokenId> tokens,
                     const HookSet& hooks) {
  VisionOutput vis = vision_encode(w, image, hooks);
  ForwardTrace trace = decode_step(w, tokens, vis.tokens, hooks);
  trace.vision_maps = std::move(vis.maps);
  return trace;
}

void save_weights(const ModelWeights& w, const std::filesystem::path& dir) {
  check_weights(w);
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw InputError("cannot write " + (dir / "weights.bin").string());

  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for_each_tensor(w, [&](const std::string& name, const Tensor& t) {
    for (double v : t.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      bin.write(bytes, 8);
    }
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", 8 * t.size()}});
    offset += 8 * t.size();
  });

  nlohmann::json manifest{{"format", "float64-le"}, {"config", w.config}, {"tensors", tensors}};
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << "\n";
}

ModelWeights load_weights(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw InputError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed manifest: ") + e.what());
  }
  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw InputError("cannot read " + (dir / "weights.bin").string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  ModelConfig config = manifest.at("config").get<ModelConfig>();
  ModelWeights w = init_model(config, 0);
  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : manifest.at("tensors")) entries[t.at("name").get<std::string>()] = t;

  for_each_tensor(w, [&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw InputError("manifest is missing tensor " + name);
    const Shape shape = it->second.at("shape").get<Shape>();
    const auto offset = it->second.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_product(shape);
    if (offset + 8 * n > blob.size()) throw InputError("weights.bin is truncated at tensor " + name);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[offset + 8 * i + b])) << (8 * b);
      }
      data[i] = std::bit_cast<double>(bits);
    }
    t = Tensor(shape, std::move(data));
  });
  check_weights(w);
  return w;
}

}  // namespace causalmm
