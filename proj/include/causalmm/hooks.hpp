#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <map>

#include "causalmm/tensor.hpp"

namespace causalmm {

enum class Modality { vision, language };

// Whether hooks replace the post-softmax weights (default) or the raw
// scaled dot-product scores before the softmax.
enum class AttentionStage { post_softmax, pre_softmax };

// One head's attention in one layer. For post-softmax maps `weights` is
// row-stochastic; when `causal` is set, entries above the diagonal are
// outside the support and are exactly zero.
struct AttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;
  Tensor weights;
  bool causal = false;
};

// True when entry (r, c) of a causal or full map may carry weight.
inline bool in_support(bool causal, std::size_t r, std::size_t c) { return !causal || c <= r; }

struct HookKey {
  Modality modality;
  std::size_t layer;
  std::size_t head;
  auto operator<=>(const HookKey&) const = default;
};

// Produces raw counterfactual values for a natural map. The raw values are
// turned into usable weights by finalize_counterfactual.
using CounterfactualFn = std::function<Tensor(const AttentionMap& natural)>;

class HookSet {
 public:
  HookSet() = default;
  explicit HookSet(AttentionStage stage) : stage_(stage) {}

  void set(HookKey key, CounterfactualFn fn) { hooks_[key] = std::move(fn); }
  const CounterfactualFn* find(const HookKey& key) const;

  std::size_t size() const noexcept { return hooks_.size(); }
  std::size_t count(Modality modality) const;
  bool empty() const noexcept { return hooks_.empty(); }

  AttentionStage stage() const noexcept { return stage_; }

  const std::map<HookKey, CounterfactualFn>& entries() const noexcept { return hooks_; }

  // Union with `other`; entries of `other` win on key collisions.
  HookSet merged(const HookSet& other) const;

 private:
  AttentionStage stage_ = AttentionStage::post_softmax;
  std::map<HookKey, CounterfactualFn> hooks_;
};

// Clamps raw values to >= 0 and renormalizes every row over its support.
// A row with zero mass becomes uniform over its support.
Tensor renormalize_rows(const Tensor& raw, bool causal);

// Post-softmax: renormalize_rows. Pre-softmax: softmax over the support.
Tensor finalize_counterfactual(const Tensor& raw, bool causal, AttentionStage stage);

}  // namespace causalmm
