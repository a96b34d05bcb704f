#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "causalmm/error.hpp"
#include "causalmm/intervene.hpp"
#include "support.hpp"

using namespace causalmm;
using namespace causalmm::testing;

namespace {

AttentionMap map_of(Tensor w, bool causal = false) {
  AttentionMap a;
  a.weights = std::move(w);
  a.causal = causal;
  return a;
}

void expect_stochastic(const Tensor& w, bool causal, double tol) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      EXPECT_GE(w.at(r, c), 0.0);
      EXPECT_LE(w.at(r, c), 1.0);
      if (!in_support(causal, r, c)) {
        EXPECT_EQ(w.at(r, c), 0.0);
      }
      sum += w.at(r, c);
    }
    EXPECT_NEAR(sum, 1.0, tol);
  }
}

std::vector<double> sorted(const Tensor& t) {
  std::vector<double> v = t.values();
  std::sort(v.begin(), v.end());
  return v;
}

InterventionSpec spec_of(InterventionModality m, CounterfactualKind k, LayerRange v, LayerRange l) {
  InterventionSpec s;
  s.modality = m;
  s.kind = k;
  s.vision_layers = v;
  s.language_layers = l;
  return s;
}

}  // namespace

TEST(RandomAttention, SameSeedSameOutput) {
  SeededRng g(1);
  const AttentionMap a = random_map(g, 4, 4);
  SeededRng r1(7), r2(7);
  EXPECT_EQ(random_attention(a, 1.0, 1.0, r1).weights, random_attention(a, 1.0, 1.0, r2).weights);
}

TEST(RandomAttention, RowsSumToOneForAnyScale) {
  SeededRng g(2);
  for (double scale : {1e-6, 0.3, 1.0, 17.0, 1e6}) {
    SeededRng rng(3);
    const AttentionMap out = random_attention(random_map(g, 5, 7), scale, 1.0, rng);
    expect_stochastic(out.weights, false, 1e-12);
  }
}

TEST(RandomAttention, EntriesStrictlyInsideUnitInterval) {
  SeededRng g(4);
  SeededRng rng(7);
  const AttentionMap out = random_attention(random_map(g, 4, 4), 1.0, 1.0, rng);
  for (double v : out.weights.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(RandomAttention, IndependentOfInputValues) {
  SeededRng g(5);
  const AttentionMap a = random_map(g, 3, 6), b = random_map(g, 3, 6);
  SeededRng r1(11), r2(11);
  EXPECT_EQ(random_attention(a, 1.0, 1.0, r1).weights, random_attention(b, 1.0, 1.0, r2).weights);
}

TEST(UniformAttention, StochasticRowBecomesUniform) {
  const AttentionMap out = uniform_attention(map_of(Tensor::matrix({{0.1, 0.2, 0.3, 0.4}})), 0.0);
  for (double v : out.weights.values()) EXPECT_EQ(v, 0.25);
}

TEST(UniformAttention, OneHotRow) {
  const AttentionMap out = uniform_attention(map_of(Tensor::matrix({{1, 0}})), 0.0);
  EXPECT_EQ(out.weights, Tensor::matrix({{0.5, 0.5}}));
}

TEST(UniformAttention, PerturbationRenormalizesAway) {
  const AttentionMap out = uniform_attention(map_of(Tensor::matrix({{0.5, 0.5}})), 0.1);
  EXPECT_EQ(out.weights, Tensor::matrix({{0.5, 0.5}}));
}

TEST(UniformAttention, ExactlyOneOverK) {
  SeededRng g(6);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 1 + g.index(20);
    const AttentionMap out = uniform_attention(random_map(g, 1 + g.index(5), k), 0.0);
    for (double v : out.weights.values()) EXPECT_NEAR(v, 1.0 / static_cast<double>(k), 1e-15);
  }
}

TEST(UniformAttention, CausalRowsUniformOverSupport) {
  SeededRng g(7);
  const AttentionMap out = uniform_attention(random_map(g, 4, 4, true), 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out.weights.at(r, c), c <= r ? 1.0 / static_cast<double>(r + 1) : 0.0, 1e-15);
    }
  }
}

TEST(ReversedAttention, GlobalMaxByHand) {
  // Row [0.1, 0.4] in a map whose global max is 0.4: raw [0.3, 0] -> [1, 0].
  const Tensor raw = reversed_values(map_of(Tensor::matrix({{0.1, 0.4}, {0.35, 0.15}})), 0.0);
  EXPECT_NEAR(raw.at(0, 0), 0.3, 1e-15);
  EXPECT_EQ(raw.at(0, 1), 0.0);
  const AttentionMap out = reversed_attention(map_of(Tensor::matrix({{0.1, 0.4}, {0.35, 0.15}})), 0.0);
  EXPECT_NEAR(out.weights.at(0, 0), 1.0, 1e-15);
  EXPECT_EQ(out.weights.at(0, 1), 0.0);
}

TEST(ReversedAttention, UniformRowIsFixedPoint) {
  const AttentionMap out = reversed_attention(map_of(Tensor::matrix({{0.25, 0.25, 0.25, 0.25}})), 0.0);
  EXPECT_EQ(out.weights, Tensor::matrix({{0.25, 0.25, 0.25, 0.25}}));
}

TEST(ReversedAttention, OffsetByHand) {
  // Global max 0.6, offset 0.2: raw [0.2, 0.4] -> [1/3, 2/3].
  const AttentionMap out = reversed_attention(map_of(Tensor::matrix({{0.6, 0.4}})), 0.2);
  EXPECT_NEAR(out.weights.at(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(out.weights.at(0, 1), 2.0 / 3.0, 1e-15);
}

TEST(ReversedAttention, RowScopeUsesRowMax) {
  const Tensor w = Tensor::matrix({{0.2, 0.8}, {0.4, 0.6}});
  const Tensor map_raw = reversed_values(map_of(w), 0.0, MaxScope::map);
  const Tensor row_raw = reversed_values(map_of(w), 0.0, MaxScope::row);
  EXPECT_NEAR(map_raw.at(1, 0), 0.4, 1e-15);
  EXPECT_NEAR(row_raw.at(1, 0), 0.2, 1e-15);
  EXPECT_EQ(row_raw.at(1, 1), 0.0);
}

TEST(ReversedAttention, TwiceRestoresRowOrdering) {
  SeededRng g(8);
  for (int t = 0; t < 200; ++t) {
    const AttentionMap a = random_map(g, 3, 5);
    const Tensor once = reversed_values(a, 0.0);
    const Tensor twice = reversed_values(map_of(once), 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
          if (a.weights.at(r, i) < a.weights.at(r, j)) {
            EXPECT_LE(twice.at(r, i), twice.at(r, j));
          }
        }
      }
    }
  }
}

TEST(ReversedAttention, UniformMapWithZeroOffsetStaysUniform) {
  const AttentionMap out = reversed_attention(map_of(Tensor::filled({3, 3}, 1.0 / 3.0)), 0.0);
  for (double v : out.weights.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(ShuffledAttention, OneByOneIsIdentity) {
  SeededRng rng(1);
  const AttentionMap out = shuffled_attention(map_of(Tensor::matrix({{1.0}})), Modality::vision, rng);
  EXPECT_EQ(out.weights, Tensor::matrix({{1.0}}));
}

TEST(ShuffledAttention, TwoByTwoOutcomesEnumerated) {
  const Tensor w = Tensor::matrix({{0.9, 0.1}, {0.2, 0.8}});
  // The four (row permutation, column permutation) outcomes.
  const std::vector<Tensor> outcomes{
      w,
      Tensor::matrix({{0.1, 0.9}, {0.8, 0.2}}),  // column swap
      Tensor::matrix({{0.2, 0.8}, {0.9, 0.1}}),  // row swap
      Tensor::matrix({{0.8, 0.2}, {0.1, 0.9}}),  // both
  };
  std::set<std::size_t> seen;
  std::optional<std::uint64_t> both_seed;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    SeededRng rng(seed);
    const Tensor out = shuffled_attention(map_of(w), Modality::vision, rng).weights;
    const auto it = std::find(outcomes.begin(), outcomes.end(), out);
    ASSERT_NE(it, outcomes.end()) << "seed " << seed;
    const std::size_t idx = static_cast<std::size_t>(it - outcomes.begin());
    seen.insert(idx);
    if (idx == 3 && !both_seed) both_seed = seed;
  }
  EXPECT_EQ(seen.size(), 4u);
  ASSERT_TRUE(both_seed.has_value());
  SeededRng rng(*both_seed);
  EXPECT_EQ(shuffled_attention(map_of(w), Modality::vision, rng).weights, Tensor::matrix({{0.8, 0.2}, {0.1, 0.9}}));
}

TEST(ShuffledAttention, PreservesMultiset) {
  SeededRng g(9);
  for (int t = 0; t < 500; ++t) {
    const AttentionMap a = random_map(g, 1 + g.index(6), 1 + g.index(6));
    SeededRng r1(t), r2(t);
    EXPECT_EQ(sorted(shuffled_values(a, r1)), sorted(a.weights));
    // Renormalizing an already stochastic row moves entries by rounding only.
    const AttentionMap out = shuffled_attention(a, Modality::vision, r2);
    const auto got = sorted(out.weights), want = sorted(a.weights);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-15);
  }
}

TEST(ShuffledAttention, RejectsLanguage) {
  SeededRng g(10), rng(1);
  EXPECT_THROW(shuffled_attention(random_map(g, 3, 3), Modality::language, rng), ModalityError);
  EXPECT_THROW(shuffled_values(random_map(g, 3, 3, true), rng), ModalityError);
}

TEST(Counterfactuals, AllKindsRowStochastic) {
  SeededRng g(12);
  for (int t = 0; t < 1000; ++t) {
    const bool causal = g.index(2) == 1;
    const std::size_t n = 1 + g.index(8);
    const AttentionMap a = random_map(g, n, causal ? n : 1 + g.index(8), causal);
    SeededRng rng(t);
    expect_stochastic(random_attention(a, 0.5 + g.uniform(), 0.5 + g.uniform(), rng).weights, causal, 1e-9);
    expect_stochastic(uniform_attention(a, 0.01 * g.uniform()).weights, causal, 1e-9);
    expect_stochastic(reversed_attention(a, 0.1 * g.uniform()).weights, causal, 1e-9);
    if (!causal) expect_stochastic(shuffled_attention(a, Modality::vision, rng).weights, false, 1e-9);
  }
}

TEST(Renormalize, ClampsNegativesAndHandlesZeroRows) {
  const Tensor out = renormalize_rows(Tensor::matrix({{-1.0, 3.0}, {0.0, 0.0}}), false);
  EXPECT_EQ(out, Tensor::matrix({{0.0, 1.0}, {0.5, 0.5}}));
}

TEST(InterventionSpec, Validation) {
  InterventionSpec s = spec_of(InterventionModality::language, CounterfactualKind::shuffled, {}, {0, 1});
  EXPECT_THROW(s.validate(), ModalityError);
  s.modality = InterventionModality::both;
  EXPECT_THROW(s.validate(), ModalityError);
  s.modality = InterventionModality::vision;
  EXPECT_NO_THROW(s.validate());
  s.params.sigma = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s.params.sigma = 1.0;
  s.params.beta = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(InterventionSpec, JsonRoundTrip) {
  InterventionSpec s = spec_of(InterventionModality::both, CounterfactualKind::reversed, {0, 2}, {1, 3});
  s.params.lambda = 0.25;
  s.params.zeta = 0.5;
  s.seed = 99;
  nlohmann::json j;
  to_json(j, s);
  EXPECT_EQ(j.at("layer_range").at("language"), nlohmann::json({1, 3}));
  EXPECT_EQ(j.get<InterventionSpec>(), s);
}

TEST(InterventionSpec, JsonErrorsCarryFieldPath) {
  const auto parse = [](const char* text) { return nlohmann::json::parse(text).get<InterventionSpec>(); };
  try {
    parse(R"({"modality":"vision","kind":"random","params":{"sigmaa":1}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "params.sigmaa");
  }
  EXPECT_THROW(parse(R"({"modality":"audio","kind":"random"})"), ConfigError);
  EXPECT_THROW(parse(R"({"modality":"vision"})"), ConfigError);
  EXPECT_THROW(parse(R"({"modality":"language","kind":"shuffled","layer_range":{"language":[0,1]}})"),
               ModalityError);
}

TEST(MakeHooks, CountsVisionEntries) {
  const ModelConfig c;
  const HookSet h = make_hooks(spec_of(InterventionModality::vision, CounterfactualKind::uniform, {0, 2}, {0, 4}), c);
  EXPECT_EQ(h.count(Modality::vision), 2 * c.heads);
  EXPECT_EQ(h.count(Modality::language), 0u);
  EXPECT_EQ(h.size(), 2 * c.heads);
}

TEST(MakeHooks, ShuffledLanguageRejected) {
  EXPECT_THROW(
      make_hooks(spec_of(InterventionModality::language, CounterfactualKind::shuffled, {}, {0, 1}), ModelConfig{}),
      ModalityError);
}

TEST(MakeHooks, EmptyRangeIsValidAndEmpty) {
  const HookSet h = make_hooks(spec_of(InterventionModality::both, CounterfactualKind::random, {}, {2, 2}), ModelConfig{});
  EXPECT_TRUE(h.empty());
}

TEST(MakeHooks, RangeBeyondModel) {
  EXPECT_THROW(make_hooks(spec_of(InterventionModality::language, CounterfactualKind::random, {}, {0, 5}), ModelConfig{}),
               ConfigError);
}

TEST(MakeHooks, DeterministicAndOrderIndependent) {
  const ModelConfig c;
  InterventionSpec s = spec_of(InterventionModality::both, CounterfactualKind::random, {0, 2}, {0, 4});
  s.seed = 5;
  const HookSet a = make_hooks(s, c), b = make_hooks(s, c);
  SeededRng g(13);
  const AttentionMap m1 = random_map(g, 4, 4, true), m2 = random_map(g, 4, 4, true);
  const auto* a0 = a.find({Modality::language, 0, 0});
  const auto* a1 = a.find({Modality::language, 1, 1});
  const auto* b0 = b.find({Modality::language, 0, 0});
  const auto* b1 = b.find({Modality::language, 1, 1});
  ASSERT_TRUE(a0 && a1 && b0 && b1);
  const Tensor x0 = (*a0)(m1), x1 = (*a1)(m2);
  const Tensor y1 = (*b1)(m2), y0 = (*b0)(m1);
  EXPECT_EQ(x0, y0);
  EXPECT_EQ(x1, y1);
  EXPECT_NE(x0, x1);
}

TEST(MakeHooks, StepAndSampleChangeTheDraw) {
  const ModelConfig c;
  const InterventionSpec s = spec_of(InterventionModality::vision, CounterfactualKind::random, {0, 1}, {});
  SeededRng g(14);
  const AttentionMap m = random_map(g, 3, 3);
  const HookKey key{Modality::vision, 0, 0};
  const Tensor base = (*make_hooks(s, c, {}).find(key))(m);
  EXPECT_NE(base, (*make_hooks(s, c, {AttentionStage::post_softmax, MaxScope::map, 1, 0}).find(key))(m));
  EXPECT_NE(base, (*make_hooks(s, c, {AttentionStage::post_softmax, MaxScope::map, 0, 1}).find(key))(m));
}
