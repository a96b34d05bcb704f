#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "causalmm/decode.hpp"
#include "causalmm/model.hpp"

namespace causalmm {

enum class Label { no, yes };

// One yes/no object-presence probe.
struct SynthCase {
  Tensor image;  // visual_tokens x in_dim
  std::size_t question_object = 0;
  Label label = Label::no;
  std::vector<TokenId> prompt;  // {BOS, object token}
};

struct SynthDataset {
  std::uint64_t seed = 0;
  double bias_strength = 0.0;
  ModelWeights weights;  // lm_head_bias[YES] = bias_strength
  Tensor signatures;     // n_objects x in_dim, unit rows
  std::vector<SynthCase> cases;
  std::size_t retries = 0;         // signature regenerations needed
  double unbiased_accuracy = 0.0;  // regular argmax accuracy at bias 0
};

inline constexpr std::size_t kSynthObjects = 6;
inline constexpr TokenId kFirstObjectToken = 3;

inline TokenId object_token(std::size_t object) { return kFirstObjectToken + static_cast<TokenId>(object); }

// Answer parsed from a generated sequence: yes iff the first token is YES.
Label answer_of(const std::vector<TokenId>& generated);

// Balanced POPE-style dataset over the default ModelConfig, with a probe
// circuit planted on top of init_model(seed) so that the unbiased model
// separates the classes. Throws InputError for odd n_cases or negative bias;
// GenerationError if the accuracy check at bias 0 (> 0.9) fails 10 times.
SynthDataset gen_pope_synth(std::uint64_t seed, std::size_t n_cases, double bias_strength);

// Same dataset with lm_head_bias[YES] replaced.
SynthDataset with_bias(SynthDataset dataset, double bias_strength);

// dataset.json (cases, metadata) plus weights/ (see save_weights).
void save_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);
SynthDataset load_dataset(const std::filesystem::path& dir);

}  // namespace causalmm
