#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "causalmm/hooks.hpp"
#include "causalmm/tensor.hpp"

namespace causalmm {

using TokenId = std::uint32_t;

inline constexpr TokenId kBosToken = 0;
inline constexpr TokenId kYesToken = 1;
inline constexpr TokenId kNoToken = 2;

struct ModelConfig {
  std::size_t grid = 4;  // patch grid side; grid * grid visual tokens
  std::size_t in_dim = 8;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t vision_layers = 2;
  std::size_t decoder_layers = 4;
  std::size_t vocab = 64;

  std::size_t visual_tokens() const noexcept { return grid * grid; }
  std::size_t head_dim() const noexcept { return d_model / heads; }
  std::size_t ff_dim() const noexcept { return 4 * d_model; }

  // Throws ConfigError.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Pre-LN transformer block: x += Attn(LN1(x)); x += W2 relu(W1 LN2(x)).
struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;  // d_model x d_model, heads split along columns
  Tensor ln2_gain, ln2_bias;
  Tensor ff_in;   // d_model x ff_dim
  Tensor ff_out;  // ff_dim x d_model

  bool operator==(const LayerWeights&) const = default;
};

struct ModelWeights {
  ModelConfig config;

  Tensor patch_embed;  // in_dim x d_model
  Tensor patch_bias;   // d_model; constant visual prior added to every patch
  std::vector<LayerWeights> vision;
  Tensor vision_ln_gain, vision_ln_bias;
  Tensor projector;  // d_model x d_model

  Tensor token_embed;  // vocab x d_model
  std::vector<LayerWeights> decoder;
  Tensor final_ln_gain, final_ln_bias;
  Tensor lm_head;       // d_model x vocab
  Tensor lm_head_bias;  // vocab; planted language prior, zero by default

  bool operator==(const ModelWeights&) const = default;
};

// Visits every tensor with a stable dotted name ("decoder.2.wq", ...).
void for_each_tensor(ModelWeights& w, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const ModelWeights& w,
                     const std::function<void(const std::string&, const Tensor&)>& fn);

// Matrices ~ N(0, 1/d_model), layer-norm gains 1, all biases 0.
ModelWeights init_model(const ModelConfig& config, std::uint64_t seed);

struct VisionOutput {
  Tensor tokens;  // visual_tokens x d_model, after the projector
  std::vector<AttentionMap> maps;
};

struct ForwardTrace {
  Tensor logits;  // vocab
  std::vector<AttentionMap> vision_maps;
  std::vector<AttentionMap> decoder_maps;
};

VisionOutput vision_encode(const ModelWeights& w, const Tensor& image, const HookSet& hooks);

// Next-token logits for the sequence [visual tokens ; tokens] under full
// causal self-attention. vision_maps of the returned trace is empty.
ForwardTrace decode_step(const ModelWeights& w, std::span<const TokenId> tokens, const Tensor& visual,
                         const HookSet& hooks);

// vision_encode followed by decode_step; the trace carries both map lists.
ForwardTrace forward(const ModelWeights& w, const Tensor& image, std::span<const TokenId> tokens,
                     const HookSet& hooks);

// weights.bin holds every tensor as little-endian float64 in for_each_tensor
// order; manifest.json lists name, shape, byte offset and the config.
void save_weights(const ModelWeights& w, const std::filesystem::path& dir);
ModelWeights load_weights(const std::filesystem::path& dir);

}  // namespace causalmm
