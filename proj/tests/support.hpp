#pragma once

// Hand-rolled generators for property tests.

#include <cmath>
#include <cstdint>
#include <vector>

#include "causalmm/hooks.hpp"
#include "causalmm/model.hpp"
#include "causalmm/rng.hpp"
#include "causalmm/tensor.hpp"

namespace causalmm::testing {

inline Tensor random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor({rows, cols}, std::move(v));
}

inline Tensor random_vector(SeededRng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor({n}, std::move(v));
}

// Row-stochastic map with random sharpness; causal maps are zero above the
// diagonal and square.
inline AttentionMap random_map(SeededRng& rng, std::size_t rows, std::size_t cols, bool causal = false) {
  AttentionMap a;
  a.layer = rng.index(4);
  a.head = rng.index(2);
  a.causal = causal;
  Tensor w({rows, cols});
  const double temperature = 0.2 + 4.0 * rng.uniform();
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!in_support(causal, r, c)) continue;
      w.at(r, c) = std::exp(temperature * rng.normal());
      sum += w.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) w.at(r, c) /= sum;
  }
  a.weights = w;
  return a;
}

inline ModelConfig small_config(SeededRng& rng) {
  ModelConfig c;
  c.grid = 2 + rng.index(2);
  c.in_dim = 3 + rng.index(4);
  c.heads = 1 + rng.index(2);
  c.d_model = c.heads * (4 + 2 * rng.index(3));
  c.vision_layers = 1 + rng.index(2);
  c.decoder_layers = 1 + rng.index(3);
  c.vocab = 5 + rng.index(12);
  return c;
}

inline std::vector<TokenId> random_prompt(SeededRng& rng, std::size_t vocab, std::size_t len) {
  std::vector<TokenId> p(len);
  for (auto& t : p) t = static_cast<TokenId>(rng.index(vocab));
  return p;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace causalmm::testing
