#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "causalmm/hooks.hpp"
#include "causalmm/model.hpp"
#include "causalmm/rng.hpp"

namespace causalmm {

enum class InterventionModality { vision, language, both };
enum class CounterfactualKind { random, uniform, reversed, shuffled };

// Scope of the max in the reversed counterfactual.
enum class MaxScope { map, row };

struct InterventionParams {
  double sigma = 1.0;    // vision random scale
  double alpha_v = 1.0;  // vision random normalization
  double beta = 1.0;     // language random scale
  double alpha_l = 1.0;  // language random normalization
  double eps_u = 0.0;    // vision uniform perturbation
  double delta = 0.0;    // language uniform perturbation
  double lambda = 0.0;   // vision reversed offset
  double zeta = 0.0;     // language reversed offset

  bool operator==(const InterventionParams&) const = default;
};

// Half-open [begin, end).
struct LayerRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool empty() const noexcept { return end <= begin; }
  bool contains(std::size_t layer) const noexcept { return layer >= begin && layer < end; }
  bool operator==(const LayerRange&) const = default;
  auto operator<=>(const LayerRange&) const = default;
};

struct InterventionSpec {
  InterventionModality modality = InterventionModality::vision;
  CounterfactualKind kind = CounterfactualKind::random;
  LayerRange vision_layers;
  LayerRange language_layers;
  InterventionParams params;
  std::uint64_t seed = 0;

  bool targets(Modality m) const noexcept;

  // ModalityError for shuffled on language; ConfigError for bad params.
  void validate() const;

  bool operator==(const InterventionSpec&) const = default;
};

std::string to_string(InterventionModality m);
std::string to_string(CounterfactualKind k);
std::string to_string(Modality m);
InterventionModality parse_intervention_modality(const std::string& s);
CounterfactualKind parse_kind(const std::string& s);

void to_json(nlohmann::json& j, const InterventionSpec& s);
void from_json(const nlohmann::json& j, InterventionSpec& s);

struct HookOptions {
  AttentionStage stage = AttentionStage::post_softmax;
  MaxScope reversed_scope = MaxScope::map;
  // Mixed into every hook's rng substream (decode step, sample index).
  std::uint64_t step = 0;
  std::uint64_t sample = 0;
};

// Raw counterfactual values over the support of `a`; off-support entries
// are zero. These feed finalize_counterfactual.
Tensor random_values(const AttentionMap& a, double scale, SeededRng& rng);
Tensor uniform_values(const AttentionMap& a, double perturb);
Tensor reversed_values(const AttentionMap& a, double offset, MaxScope scope = MaxScope::map);
Tensor shuffled_values(const AttentionMap& a, SeededRng& rng);

// The four counterfactual maps, row-renormalized.
AttentionMap random_attention(const AttentionMap& a, double sigma, double alpha, SeededRng& rng);
AttentionMap uniform_attention(const AttentionMap& a, double perturb);
AttentionMap reversed_attention(const AttentionMap& a, double offset, MaxScope scope = MaxScope::map);
// Throws ModalityError for language maps: token order carries meaning there.
AttentionMap shuffled_attention(const AttentionMap& a, Modality modality, SeededRng& rng);

// One hook per head for every targeted (modality, layer). Each hook owns an
// rng substream derived from (seed, modality, layer, head, step, sample).
// Throws ConfigError if a range exceeds the model's layer count.
HookSet make_hooks(const InterventionSpec& spec, const ModelConfig& config, const HookOptions& options = {});

}  // namespace causalmm
