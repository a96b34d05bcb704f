#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "causalmm/error.hpp"
#include "causalmm/intervene.hpp"
#include "causalmm/model.hpp"
#include "support.hpp"

using namespace causalmm;
using namespace causalmm::testing;

namespace {

Tensor random_image(SeededRng& rng, const ModelConfig& c) { return random_matrix(rng, c.visual_tokens(), c.in_dim); }

void expect_row_stochastic(const AttentionMap& a, double tol = 1e-9) {
  for (std::size_t r = 0; r < a.weights.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < a.weights.cols(); ++c) {
      const double v = a.weights.at(r, c);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      if (!in_support(a.causal, r, c)) {
        EXPECT_EQ(v, 0.0);
      }
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, tol);
  }
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.d_model = 33;
  c.heads = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.vocab = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.decoder_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InitModel, DeterministicPerSeed) {
  const ModelConfig c;
  EXPECT_EQ(init_model(c, 5), init_model(c, 5));
}

TEST(InitModel, SeedsDiffer) {
  const ModelConfig c;
  const ModelWeights a = init_model(c, 1), b = init_model(c, 2);
  EXPECT_NE(a.decoder[0].wq, b.decoder[0].wq);
  EXPECT_NE(a.patch_embed, b.patch_embed);
}

TEST(InitModel, InvalidConfig) {
  ModelConfig c;
  c.d_model = 33;
  EXPECT_THROW(init_model(c, 1), ConfigError);
}

TEST(InitModel, ShapesScaleAndZeroBias) {
  const ModelConfig c;
  const ModelWeights w = init_model(c, 3);
  EXPECT_EQ(w.vision.size(), c.vision_layers);
  EXPECT_EQ(w.decoder.size(), c.decoder_layers);
  EXPECT_EQ(w.lm_head.shape(), (Shape{c.d_model, c.vocab}));
  for (double v : w.lm_head_bias.values()) EXPECT_EQ(v, 0.0);
  for (double v : w.decoder[1].ln1_gain.values()) EXPECT_EQ(v, 1.0);
  // Entries of the token embedding have variance 1/d_model.
  double sq = 0.0;
  for (double v : w.token_embed.values()) sq += v * v;
  EXPECT_NEAR(sq / static_cast<double>(w.token_embed.size()), 1.0 / static_cast<double>(c.d_model), 0.005);
}

TEST(VisionEncode, NaturalMapsAreRowStochastic) {
  SeededRng rng(1);
  const ModelConfig c;
  const ModelWeights w = init_model(c, 1);
  const VisionOutput out = vision_encode(w, random_image(rng, c), HookSet{});
  ASSERT_EQ(out.maps.size(), c.vision_layers * c.heads);
  EXPECT_EQ(out.tokens.shape(), (Shape{c.visual_tokens(), c.d_model}));
  for (const auto& m : out.maps) {
    EXPECT_FALSE(m.causal);
    expect_row_stochastic(m);
  }
}

TEST(VisionEncode, UniformHooksGiveUniformMaps) {
  SeededRng rng(2);
  const ModelConfig c;
  const ModelWeights w = init_model(c, 2);
  InterventionSpec spec;
  spec.modality = InterventionModality::vision;
  spec.kind = CounterfactualKind::uniform;
  spec.vision_layers = {0, c.vision_layers};
  const VisionOutput out = vision_encode(w, random_image(rng, c), make_hooks(spec, c));
  const double k = static_cast<double>(c.visual_tokens());
  for (const auto& m : out.maps) {
    for (double v : m.weights.values()) EXPECT_NEAR(v, 1.0 / k, 1e-15);
  }
}

TEST(VisionEncode, Deterministic) {
  SeededRng rng(3);
  const ModelConfig c;
  const ModelWeights w = init_model(c, 3);
  const Tensor image = random_image(rng, c);
  InterventionSpec spec;
  spec.kind = CounterfactualKind::random;
  spec.vision_layers = {0, 2};
  spec.seed = 4;
  EXPECT_EQ(vision_encode(w, image, make_hooks(spec, c)).tokens, vision_encode(w, image, make_hooks(spec, c)).tokens);
  EXPECT_EQ(vision_encode(w, image, HookSet{}).tokens, vision_encode(w, image, HookSet{}).tokens);
}

TEST(VisionEncode, ImageShapeMismatch) {
  const ModelConfig c;
  const ModelWeights w = init_model(c, 1);
  EXPECT_THROW(vision_encode(w, Tensor({c.visual_tokens() + 1, c.in_dim}), HookSet{}), DimensionError);
  EXPECT_THROW(vision_encode(w, Tensor({c.visual_tokens(), c.in_dim + 1}), HookSet{}), DimensionError);
}

TEST(DecodeStep, BiasIsAddedLast) {
  SeededRng rng(4);
  const ModelConfig c;
  ModelWeights w = init_model(c, 4);
  const Tensor image = random_image(rng, c);
  const std::vector<TokenId> prompt{kBosToken, 5};
  const Tensor visual = vision_encode(w, image, HookSet{}).tokens;
  const Tensor base = decode_step(w, prompt, visual, HookSet{}).logits;
  w.lm_head_bias[kYesToken] = 5.0;
  const Tensor biased = decode_step(w, prompt, visual, HookSet{}).logits;
  EXPECT_EQ(biased[kYesToken] - base[kYesToken], 5.0);
  for (std::size_t i = 0; i < c.vocab; ++i) {
    if (i != kYesToken) {
      EXPECT_EQ(biased[i], base[i]);
    }
  }
}

TEST(DecodeStep, DeterministicTrace) {
  SeededRng rng(5);
  const ModelConfig c;
  const ModelWeights w = init_model(c, 5);
  const Tensor image = random_image(rng, c);
  const std::vector<TokenId> prompt{kBosToken, 7, 9};
  const ForwardTrace a = forward(w, image, prompt, HookSet{});
  const ForwardTrace b = forward(w, image, prompt, HookSet{});
  EXPECT_EQ(a.logits, b.logits);
  ASSERT_EQ(a.decoder_maps.size(), b.decoder_maps.size());
  for (std::size_t i = 0; i < a.decoder_maps.size(); ++i) EXPECT_EQ(a.decoder_maps[i].weights, b.decoder_maps[i].weights);
  EXPECT_EQ(a.vision_maps.size(), c.vision_layers * c.heads);
  EXPECT_EQ(a.decoder_maps.size(), c.decoder_layers * c.heads);
}

TEST(DecodeStep, LayerZeroHookMatchesRecordedCounterfactual) {
  SeededRng rng(6);
  const ModelConfig c;
  const ModelWeights w = init_model(c, 6);
  const Tensor visual = vision_encode(w, random_image(rng, c), HookSet{}).tokens;
  const std::vector<TokenId> prompt{kBosToken, 3, 4};

  std::map<std::size_t, Tensor> recorded;
  HookSet hooks;
  for (std::size_t h = 0; h < c.heads; ++h) {
    hooks.set(HookKey{Modality::language, 0, h}, [&recorded, h](const AttentionMap& a) {
      SeededRng local(100 + h);
      Tensor raw = random_values(a, 1.0, local);
      recorded[h] = renormalize_rows(raw, a.causal);
      return raw;
    });
  }
  const ForwardTrace natural = decode_step(w, prompt, visual, HookSet{});
  const ForwardTrace hooked = decode_step(w, prompt, visual, hooks);
  for (const auto& m : hooked.decoder_maps) {
    expect_row_stochastic(m);
    if (m.layer == 0) {
      EXPECT_EQ(m.weights, recorded.at(m.head));
    }
  }
  // Upstream change propagates to deeper layers.
  bool deeper_changed = false;
  for (std::size_t i = 0; i < natural.decoder_maps.size(); ++i) {
    if (natural.decoder_maps[i].layer >= 1 && natural.decoder_maps[i].weights != hooked.decoder_maps[i].weights) {
      deeper_changed = true;
    }
  }
  EXPECT_TRUE(deeper_changed);
  EXPECT_NE(natural.logits, hooked.logits);
}

TEST(DecodeStep, CausalMaskingIgnoresLaterTokens) {
  SeededRng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig c = small_config(rng);
    const ModelWeights w = init_model(c, 700 + trial);
    const Tensor visual = vision_encode(w, random_image(rng, c), HookSet{}).tokens;
    const std::vector<TokenId> prefix = random_prompt(rng, c.vocab, 1 + rng.index(3));
    std::vector<TokenId> longer = prefix;
    for (const TokenId t : random_prompt(rng, c.vocab, 1 + rng.index(3))) longer.push_back(t);
    const ForwardTrace a = decode_step(w, prefix, visual, HookSet{});
    const ForwardTrace b = decode_step(w, longer, visual, HookSet{});
    const std::size_t rows = c.visual_tokens() + prefix.size();
    for (std::size_t i = 0; i < a.decoder_maps.size(); ++i) {
      const Tensor& short_map = a.decoder_maps[i].weights;
      const Tensor& long_map = b.decoder_maps[i].weights;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t col = 0; col < rows; ++col) EXPECT_EQ(short_map.at(r, col), long_map.at(r, col));
      }
    }
  }
}

TEST(DecodeStep, EveryMapRowStochasticUnderInterventions) {
  SeededRng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig c = small_config(rng);
    const ModelWeights w = init_model(c, 800 + trial);
    InterventionSpec spec;
    spec.modality = InterventionModality::both;
    spec.kind = static_cast<CounterfactualKind>(rng.index(3));  // shuffled excluded for language
    spec.vision_layers = {0, c.vision_layers};
    spec.language_layers = {0, c.decoder_layers};
    spec.seed = trial;
    const ForwardTrace t = forward(w, random_image(rng, c), random_prompt(rng, c.vocab, 3), make_hooks(spec, c));
    for (const auto& m : t.vision_maps) expect_row_stochastic(m);
    for (const auto& m : t.decoder_maps) {
      EXPECT_TRUE(m.causal);
      expect_row_stochastic(m);
    }
  }
}

TEST(DecodeStep, PreSoftmaxIdentityHookMatchesNatural) {
  SeededRng rng(9);
  const ModelConfig c;
  const ModelWeights w = init_model(c, 9);
  const Tensor image = random_image(rng, c);
  const std::vector<TokenId> prompt{kBosToken, 11};
  HookSet hooks(AttentionStage::pre_softmax);
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    for (std::size_t h = 0; h < c.heads; ++h) {
      hooks.set(HookKey{Modality::language, l, h}, [](const AttentionMap& a) { return a.weights; });
    }
  }
  const ForwardTrace natural = forward(w, image, prompt, HookSet{});
  const ForwardTrace hooked = forward(w, image, prompt, hooks);
  EXPECT_LE(max_abs_diff(natural.logits, hooked.logits), 1e-12);
}

TEST(DecodeStep, Errors) {
  const ModelConfig c;
  const ModelWeights w = init_model(c, 1);
  const Tensor visual({c.visual_tokens(), c.d_model});
  EXPECT_THROW(decode_step(w, std::vector<TokenId>{}, visual, HookSet{}), InputError);
  EXPECT_THROW(decode_step(w, std::vector<TokenId>{0, static_cast<TokenId>(c.vocab)}, visual, HookSet{}), VocabError);
  EXPECT_THROW(decode_step(w, std::vector<TokenId>{0}, Tensor({c.visual_tokens(), c.d_model + 1}), HookSet{}),
               DimensionError);

  HookSet bad;
  bad.set(HookKey{Modality::language, 0, 0}, [](const AttentionMap&) { return Tensor({1, 1}); });
  EXPECT_THROW(decode_step(w, std::vector<TokenId>{0}, visual, bad), DimensionError);
}

TEST(Weights, SaveLoadRoundTrip) {
  const ModelConfig c;
  ModelWeights w = init_model(c, 12);
  w.lm_head_bias[kYesToken] = 2.5;
  const auto dir = std::filesystem::temp_directory_path() / "causalmm_test_weights";
  std::filesystem::remove_all(dir);
  save_weights(w, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "weights.bin"));
  std::size_t floats = 0;
  for_each_tensor(w, [&](const std::string&, const Tensor& t) { floats += t.size(); });
  EXPECT_EQ(std::filesystem::file_size(dir / "weights.bin"), 8 * floats);
  EXPECT_EQ(load_weights(dir), w);
  std::filesystem::remove_all(dir);
}

TEST(Weights, TensorNamesAreStable) {
  const ModelWeights w = init_model(ModelConfig{}, 1);
  std::vector<std::string> names;
  for_each_tensor(w, [&](const std::string& n, const Tensor&) { names.push_back(n); });
  EXPECT_EQ(names.front(), "patch_embed");
  EXPECT_NE(std::find(names.begin(), names.end(), "decoder.2.wq"), names.end());
  EXPECT_EQ(names.back(), "lm_head_bias");
}
