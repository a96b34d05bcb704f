#include "causalmm/metrics.hpp"

#include <string>

#include "causalmm/error.hpp"

namespace causalmm {

Metrics eval_metrics(std::span<const Label> predictions, std::span<const Label> labels) {
  if (predictions.size() != labels.size()) {
    throw InputError("predictions (" + std::to_string(predictions.size()) + ") and labels (" +
                     std::to_string(labels.size()) + ") differ in length");
  }
  Metrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = predictions[i] == Label::yes;
    const bool truth = labels[i] == Label::yes;
    if (pred && truth) ++m.tp;
    else if (pred) ++m.fp;
    else if (truth) ++m.fn;
    else ++m.tn;
  }
  const auto ratio = [&](std::size_t num, std::size_t den) {
    if (den == 0) {
      m.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.accuracy = m.total() ? static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total()) : 0.0;
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.degenerate = true;
    m.f1 = 0.0;
  }
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  return nlohmann::json{{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
                        {"f1", m.f1},             {"tp", m.tp},               {"fp", m.fp},
                        {"tn", m.tn},             {"fn", m.fn},               {"degenerate", m.degenerate}};
}

}  // namespace causalmm
