#pragma once

#include <cstddef>
#include <span>

#include <json.hpp>

#include "causalmm/synth.hpp"

namespace causalmm {

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  // Set when a precision, recall or f1 denominator was zero; the value is 0.
  bool degenerate = false;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

// "yes" is the positive class. Throws InputError on length mismatch.
Metrics eval_metrics(std::span<const Label> predictions, std::span<const Label> labels);

nlohmann::json to_json(const Metrics& m);

}  // namespace causalmm
