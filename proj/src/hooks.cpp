#include "causalmm/hooks.hpp"

#include <algorithm>

namespace causalmm {

const CounterfactualFn* HookSet::find(const HookKey& key) const {
  auto it = hooks_.find(key);
  return it == hooks_.end() ? nullptr : &it->second;
}

std::size_t HookSet::count(Modality modality) const {
  return static_cast<std::size_t>(std::count_if(hooks_.begin(), hooks_.end(), [&](const auto& kv) {
    return kv.first.modality == modality;
  }));
}

HookSet HookSet::merged(const HookSet& other) const {
  HookSet out = *this;
  for (const auto& [key, fn] : other.hooks_) out.hooks_[key] = fn;
  return out;
}

Tensor renormalize_rows(const Tensor& raw, bool causal) {
  Tensor out = raw;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double sum = 0.0;
    std::size_t support = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!in_support(causal, r, c)) {
        row[c] = 0.0;
        continue;
      }
      row[c] = std::max(row[c], 0.0);
      sum += row[c];
      ++support;
    }
    if (support == 0) continue;
    if (sum > 0.0) {
      for (double& v : row) v /= sum;
    } else {
      for (std::size_t c = 0; c < row.size(); ++c) {
        row[c] = in_support(causal, r, c) ? 1.0 / static_cast<double>(support) : 0.0;
      }
    }
  }
  return out;
}

Tensor finalize_counterfactual(const Tensor& raw, bool causal, AttentionStage stage) {
  if (stage == AttentionStage::post_softmax) return renormalize_rows(raw, causal);
  Tensor scores = raw;
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      if (!in_support(causal, r, c)) scores.at(r, c) = kMaskSentinel;
    }
  }
  return softmax_rows(scores);
}

}  // namespace causalmm
