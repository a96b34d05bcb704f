#include "causalmm/decode.hpp"

#include <algorithm>
#include <cmath>

#include "causalmm/error.hpp"
#include "json_util.hpp"

namespace causalmm {

namespace {

constexpr std::uint64_t kSelectTag = 0x73656c656374ULL;

std::size_t argmax_index(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void check_vocab(const Tensor& t, std::size_t vocab, const char* what) {
  if (t.rank() != 1 || t.size() != vocab) {
    throw DimensionError(std::string(what) + " logits must have length " + std::to_string(vocab));
  }
}

nlohmann::json tensor_json(const Tensor& t) { return t.values(); }

}  // namespace

std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::regular: return "regular";
    case DecodeMode::vision: return "vision";
    case DecodeMode::language: return "language";
    case DecodeMode::multimodal: return "multimodal";
  }
  return "?";
}

std::string to_string(SelectRule s) { return s == SelectRule::argmax ? "argmax" : "sample"; }

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "regular") return DecodeMode::regular;
  if (s == "vision") return DecodeMode::vision;
  if (s == "language") return DecodeMode::language;
  if (s == "multimodal") return DecodeMode::multimodal;
  throw ConfigError("mode", "unknown decoding mode '" + s + "'");
}

SelectRule parse_select_rule(const std::string& s) {
  if (s == "argmax") return SelectRule::argmax;
  if (s == "sample") return SelectRule::sample;
  throw ConfigError("select", "unknown selection rule '" + s + "'");
}

void DecodeConfig::validate() const {
  if (!std::isfinite(gamma) || gamma < 0.0) throw ConfigError("gamma", "must be finite and >= 0");
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("eps", "must lie in (0, 1]");
  if (cf_samples < 1) throw ConfigError("cf_samples", "must be >= 1");
  if (uses_vision()) {
    if (!vision_spec) throw ConfigError("vision_spec", "required for mode " + to_string(mode));
    if (!vision_spec->targets(Modality::vision)) throw ConfigError("vision_spec.modality", "must target vision");
    vision_spec->validate();
  }
  if (uses_language()) {
    if (!language_spec) throw ConfigError("language_spec", "required for mode " + to_string(mode));
    if (!language_spec->targets(Modality::language)) {
      throw ConfigError("language_spec.modality", "must target language");
    }
    language_spec->validate();
  }
}

void decode_options_from_json(const nlohmann::json& j, DecodeConfig& cfg, const std::string& path) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto wrap = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(join_path(path, e.field()), e.message());
    }
  };
  if (j.contains("mode")) wrap([&] { cfg.mode = parse_decode_mode(as_string(j.at("mode"), "mode")); });
  read_optional(j, "gamma", path, cfg.gamma, as_number);
  read_optional(j, "eps", path, cfg.eps, as_number);
  if (j.contains("select")) wrap([&] { cfg.select = parse_select_rule(as_string(j.at("select"), "select")); });
  read_optional(j, "seed", path, cfg.seed, as_u64);
  std::uint64_t n = cfg.max_tokens;
  read_optional(j, "max_tokens", path, n, as_u64);
  cfg.max_tokens = n;
  std::uint64_t k = cfg.cf_samples;
  read_optional(j, "cf_samples", path, k, as_u64);
  cfg.cf_samples = k;
  if (j.contains("end_token")) {
    if (j.at("end_token").is_null()) {
      cfg.end_token.reset();
    } else {
      cfg.end_token = static_cast<TokenId>(as_u64(j.at("end_token"), join_path(path, "end_token")));
    }
  }
  if (j.contains("hook_stage")) {
    const auto s = as_string(j.at("hook_stage"), join_path(path, "hook_stage"));
    if (s == "post_softmax") cfg.hook_stage = AttentionStage::post_softmax;
    else if (s == "pre_softmax") cfg.hook_stage = AttentionStage::pre_softmax;
    else throw ConfigError(join_path(path, "hook_stage"), "expected post_softmax or pre_softmax");
  }
  if (j.contains("reversed_scope")) {
    const auto s = as_string(j.at("reversed_scope"), join_path(path, "reversed_scope"));
    if (s == "map") cfg.reversed_scope = MaxScope::map;
    else if (s == "row") cfg.reversed_scope = MaxScope::row;
    else throw ConfigError(join_path(path, "reversed_scope"), "expected map or row");
  }
}

nlohmann::json decode_options_to_json(const DecodeConfig& cfg) {
  nlohmann::json j{{"mode", to_string(cfg.mode)},
                   {"gamma", cfg.gamma},
                   {"eps", cfg.eps},
                   {"select", to_string(cfg.select)},
                   {"seed", cfg.seed},
                   {"max_tokens", cfg.max_tokens},
                   {"cf_samples", cfg.cf_samples},
                   {"hook_stage", cfg.hook_stage == AttentionStage::post_softmax ? "post_softmax" : "pre_softmax"},
                   {"reversed_scope", cfg.reversed_scope == MaxScope::map ? "map" : "row"}};
  j["end_token"] = cfg.end_token ? nlohmann::json(*cfg.end_token) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j{{"step", r.step},
                   {"original_logits", tensor_json(r.original_logits)},
                   {"mask", r.mask},
                   {"adjusted_dist", tensor_json(r.adjusted_dist)},
                   {"chosen", r.chosen}};
  j["cf_vision_logits"] = r.cf_vision_logits ? tensor_json(*r.cf_vision_logits) : nlohmann::json(nullptr);
  j["cf_language_logits"] = r.cf_language_logits ? tensor_json(*r.cf_language_logits) : nlohmann::json(nullptr);
  return j;
}

std::vector<TokenId> plausibility_mask(const Tensor& logits, double eps) {
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("eps", "must lie in (0, 1]");
  const auto v = logits.data();
  if (v.empty()) return {};
  const double threshold = std::log(eps) + *std::max_element(v.begin(), v.end());
  std::vector<TokenId> mask;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < threshold) mask.push_back(static_cast<TokenId>(i));
  }
  return mask;
}

Tensor adjusted_logits(const Tensor& orig, const std::optional<Tensor>& cf_vision,
                       const std::optional<Tensor>& cf_language, double gamma) {
  if (cf_vision) check_vocab(*cf_vision, orig.size(), "vision counterfactual");
  if (cf_language) check_vocab(*cf_language, orig.size(), "language counterfactual");
  Tensor out = orig;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double effect = 0.0;
    if (cf_vision) effect += orig[i] - (*cf_vision)[i];
    if (cf_language) effect += orig[i] - (*cf_language)[i];
    out[i] = orig[i] + gamma * effect;
  }
  return out;
}

Tensor adjusted_distribution(const Tensor& orig, const std::optional<Tensor>& cf_vision,
                             const std::optional<Tensor>& cf_language, double gamma, double eps) {
  if (!std::isfinite(gamma) || gamma < 0.0) throw ConfigError("gamma", "must be finite and >= 0");
  Tensor exponent = adjusted_logits(orig, cf_vision, cf_language, gamma);
  const auto mask = plausibility_mask(orig, eps);
  const auto top = static_cast<TokenId>(argmax_index(orig.data()));
  if (std::binary_search(mask.begin(), mask.end(), top)) {
    throw InvariantError("plausibility mask removed the argmax token");
  }
  for (auto id : mask) exponent[id] = kMaskSentinel;
  Tensor row({1, exponent.size()}, std::vector<double>(exponent.values()));
  Tensor dist = softmax_rows(row);
  return Tensor({orig.size()}, std::vector<double>(dist.values()));
}

TokenId select_token(const Tensor& dist, std::span<const TokenId> mask, SelectRule rule, SeededRng& rng) {
  auto masked = [&](std::size_t i) { return std::find(mask.begin(), mask.end(), i) != mask.end(); };
  const auto v = dist.data();
  std::optional<std::size_t> chosen;
  if (rule == SelectRule::argmax) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (masked(i)) continue;
      if (!chosen || v[i] > v[*chosen]) chosen = i;
    }
  } else {
    const double u = rng.uniform();
    double cumulative = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (masked(i)) continue;
      cumulative += v[i];
      chosen = i;
      if (u < cumulative) break;
    }
  }
  if (!chosen) throw InvariantError("every token is masked");
  return static_cast<TokenId>(*chosen);
}

SeededRng selection_rng(std::uint64_t seed, std::size_t step) { return SeededRng::derived(seed, {kSelectTag, step}); }

GenerateResult generate_causal(const ModelWeights& w, const Tensor& image, std::span<const TokenId> prompt,
                               const DecodeConfig& cfg) {
  cfg.validate();
  if (prompt.empty()) throw InputError("prompt must be non-empty");

  const HookSet no_hooks;
  const VisionOutput clean_vision = vision_encode(w, image, no_hooks);
  std::vector<TokenId> tokens(prompt.begin(), prompt.end());
  GenerateResult result;

  auto averaged = [&](auto&& one_sample) {
    Tensor sum = one_sample(0);
    for (std::size_t s = 1; s < cfg.cf_samples; ++s) sum = add(sum, one_sample(s));
    for (auto& v : sum.data()) v /= static_cast<double>(cfg.cf_samples);
    return sum;
  };

  for (std::size_t step = 0; step < cfg.max_tokens; ++step) {
    StepRecord rec;
    rec.step = step;
    rec.original_logits = decode_step(w, tokens, clean_vision.tokens, no_hooks).logits;

    if (cfg.uses_vision()) {
      rec.cf_vision_logits = averaged([&](std::size_t sample) {
        HookOptions opts{cfg.hook_stage, cfg.reversed_scope, step, sample};
        const HookSet hooks = make_hooks(*cfg.vision_spec, w.config, opts);
        const VisionOutput cf_vision = vision_encode(w, image, hooks);
        return decode_step(w, tokens, cf_vision.tokens, no_hooks).logits;
      });
    }
    if (cfg.uses_language()) {
      rec.cf_language_logits = averaged([&](std::size_t sample) {
        HookOptions opts{cfg.hook_stage, cfg.reversed_scope, step, sample};
        const HookSet hooks = make_hooks(*cfg.language_spec, w.config, opts);
        return decode_step(w, tokens, clean_vision.tokens, hooks).logits;
      });
    }

    if (cfg.mode == DecodeMode::regular) {
      // The control selects straight from the model's distribution.
      rec.adjusted_dist = softmax_rows(rec.original_logits);
    } else {
      rec.mask = plausibility_mask(rec.original_logits, cfg.eps);
      rec.adjusted_dist =
          adjusted_distribution(rec.original_logits, rec.cf_vision_logits, rec.cf_language_logits, cfg.gamma, cfg.eps);
    }
    SeededRng select_rng = selection_rng(cfg.seed, step);
    rec.chosen = select_token(rec.adjusted_dist, rec.mask, cfg.select, select_rng);

    tokens.push_back(rec.chosen);
    result.tokens.push_back(rec.chosen);
    const bool stop = cfg.end_token && rec.chosen == *cfg.end_token;
    result.steps.push_back(std::move(rec));
    if (stop) break;
  }
  return result;
}

}  // namespace causalmm
