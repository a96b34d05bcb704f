#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "causalmm/intervene.hpp"
#include "causalmm/model.hpp"
#include "causalmm/rng.hpp"

namespace causalmm {

enum class DecodeMode { regular, vision, language, multimodal };
enum class SelectRule { argmax, sample };

std::string to_string(DecodeMode m);
std::string to_string(SelectRule s);
DecodeMode parse_decode_mode(const std::string& s);
SelectRule parse_select_rule(const std::string& s);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::regular;
  double gamma = 1.0;  // confidence in the treatment effect
  double eps = 0.1;    // adaptive plausibility threshold, in (0, 1]
  SelectRule select = SelectRule::argmax;
  std::uint64_t seed = 0;
  std::size_t max_tokens = 1;
  std::optional<TokenId> end_token;

  std::optional<InterventionSpec> vision_spec;
  std::optional<InterventionSpec> language_spec;

  // Counterfactual logits are averaged over this many independent draws.
  std::size_t cf_samples = 1;
  AttentionStage hook_stage = AttentionStage::post_softmax;
  MaxScope reversed_scope = MaxScope::map;

  bool uses_vision() const noexcept { return mode == DecodeMode::vision || mode == DecodeMode::multimodal; }
  bool uses_language() const noexcept { return mode == DecodeMode::language || mode == DecodeMode::multimodal; }

  // Throws ConfigError (or ModalityError from the specs).
  void validate() const;
};

// Reads the "decode" block of a config; specs are read separately.
void decode_options_from_json(const nlohmann::json& j, DecodeConfig& cfg, const std::string& path);
nlohmann::json decode_options_to_json(const DecodeConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  Tensor original_logits;
  std::optional<Tensor> cf_vision_logits;
  std::optional<Tensor> cf_language_logits;
  std::vector<TokenId> mask;  // ascending ids excluded by plausibility
  Tensor adjusted_dist;
  TokenId chosen = 0;
};

nlohmann::json to_json(const StepRecord& r);

// Ids whose logit is strictly below log(eps) + max logit. The argmax is
// never in the mask.
std::vector<TokenId> plausibility_mask(const Tensor& logits, double eps);

// l + gamma * sum over the provided counterfactuals of (l - l_cf).
Tensor adjusted_logits(const Tensor& orig, const std::optional<Tensor>& cf_vision,
                       const std::optional<Tensor>& cf_language, double gamma);

// softmax of adjusted_logits over the ids that survive plausibility_mask(orig).
// Masked ids carry probability exactly 0.
Tensor adjusted_distribution(const Tensor& orig, const std::optional<Tensor>& cf_vision,
                             const std::optional<Tensor>& cf_language, double gamma, double eps);

// argmax returns the smallest maximizing id; sample draws one uniform.
// Masked ids are never returned.
TokenId select_token(const Tensor& dist, std::span<const TokenId> mask, SelectRule rule, SeededRng& rng);

struct GenerateResult {
  std::vector<TokenId> tokens;  // generated ids only, prompt excluded
  std::vector<StepRecord> steps;
};

// Stream used by generate_causal to select the token at `step`.
SeededRng selection_rng(std::uint64_t seed, std::size_t step);

// Regular mode selects from softmax(logits) with an empty mask; the other
// modes select from adjusted_distribution. Counterfactual hook streams are
// keyed by (spec seed, step, sample), the selection stream by (seed, step).
GenerateResult generate_causal(const ModelWeights& w, const Tensor& image, std::span<const TokenId> prompt,
                               const DecodeConfig& cfg);

}  // namespace causalmm
