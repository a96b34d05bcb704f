#include "causalmm/intervene.hpp"

#include <algorithm>
#include <cmath>

#include "causalmm/error.hpp"
#include "json_util.hpp"

namespace causalmm {

namespace {

constexpr std::uint64_t modality_tag(Modality m) { return m == Modality::vision ? 0x7669736eULL : 0x6c616e67ULL; }

void check_square_support(const AttentionMap& a) {
  if (a.weights.rank() != 2) throw DimensionError("attention map must be 2-D");
  if (a.causal && a.weights.rows() != a.weights.cols()) throw DimensionError("causal attention map must be square");
}

AttentionMap with_weights(const AttentionMap& a, Tensor weights) {
  return AttentionMap{a.layer, a.head, std::move(weights), a.causal};
}

}  // namespace

bool InterventionSpec::targets(Modality m) const noexcept {
  if (modality == InterventionModality::both) return true;
  return (m == Modality::vision) == (modality == InterventionModality::vision);
}

void InterventionSpec::validate() const {
  if (kind == CounterfactualKind::shuffled && targets(Modality::language)) {
    throw ModalityError("shuffled attention applies to the vision encoder only; token order matters in language");
  }
  auto positive = [](double v, const char* field) {
    if (!std::isfinite(v) || v <= 0.0) throw ConfigError(std::string("params.") + field, "must be finite and > 0");
  };
  auto finite = [](double v, const char* field) {
    if (!std::isfinite(v)) throw ConfigError(std::string("params.") + field, "must be finite");
  };
  positive(params.sigma, "sigma");
  positive(params.alpha_v, "alpha_v");
  positive(params.beta, "beta");
  positive(params.alpha_l, "alpha_l");
  finite(params.eps_u, "eps_u");
  finite(params.delta, "delta");
  finite(params.lambda, "lambda");
  finite(params.zeta, "zeta");
}

std::string to_string(InterventionModality m) {
  switch (m) {
    case InterventionModality::vision: return "vision";
    case InterventionModality::language: return "language";
    case InterventionModality::both: return "both";
  }
  return "?";
}

std::string to_string(CounterfactualKind k) {
  switch (k) {
    case CounterfactualKind::random: return "random";
    case CounterfactualKind::uniform: return "uniform";
    case CounterfactualKind::reversed: return "reversed";
    case CounterfactualKind::shuffled: return "shuffled";
  }
  return "?";
}

std::string to_string(Modality m) { return m == Modality::vision ? "vision" : "language"; }

InterventionModality parse_intervention_modality(const std::string& s) {
  if (s == "vision") return InterventionModality::vision;
  if (s == "language") return InterventionModality::language;
  if (s == "both") return InterventionModality::both;
  throw ConfigError("modality", "unknown modality '" + s + "'");
}

CounterfactualKind parse_kind(const std::string& s) {
  if (s == "random") return CounterfactualKind::random;
  if (s == "uniform") return CounterfactualKind::uniform;
  if (s == "reversed") return CounterfactualKind::reversed;
  if (s == "shuffled") return CounterfactualKind::shuffled;
  throw ConfigError("kind", "unknown counterfactual kind '" + s + "'");
}

void to_json(nlohmann::json& j, const InterventionSpec& s) {
  const auto& p = s.params;
  j = nlohmann::json{
      {"modality", to_string(s.modality)},
      {"kind", to_string(s.kind)},
      {"layer_range",
       {{"vision", {s.vision_layers.begin, s.vision_layers.end}},
        {"language", {s.language_layers.begin, s.language_layers.end}}}},
      {"params",
       {{"sigma", p.sigma},
        {"alpha_v", p.alpha_v},
        {"beta", p.beta},
        {"alpha_l", p.alpha_l},
        {"eps_u", p.eps_u},
        {"delta", p.delta},
        {"lambda", p.lambda},
        {"zeta", p.zeta}}},
      {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, InterventionSpec& s) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("", "intervention spec must be an object");
  s.modality = parse_intervention_modality(as_string(require(j, "modality", ""), "modality"));
  s.kind = parse_kind(as_string(require(j, "kind", ""), "kind"));
  if (j.contains("layer_range")) {
    const auto& lr = j.at("layer_range");
    if (!lr.is_object()) throw ConfigError("layer_range", "expected an object keyed by modality");
    auto read_range = [&](const char* key, LayerRange& out) {
      if (!lr.contains(key)) return;
      const auto& arr = lr.at(key);
      const std::string path = std::string("layer_range.") + key;
      if (!arr.is_array() || arr.size() != 2) throw ConfigError(path, "expected [begin, end]");
      out.begin = as_u64(arr[0], path + "[0]");
      out.end = as_u64(arr[1], path + "[1]");
      if (out.end < out.begin) throw ConfigError(path, "end must be >= begin");
    };
    read_range("vision", s.vision_layers);
    read_range("language", s.language_layers);
  }
  if (j.contains("params")) {
    const auto& p = j.at("params");
    if (!p.is_object()) throw ConfigError("params", "expected an object");
    for (const auto& [key, _] : p.items()) {
      static const char* known[] = {"sigma", "alpha_v", "beta", "alpha_l", "eps_u", "delta", "lambda", "zeta"};
      if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
          std::end(known)) {
        throw ConfigError("params." + key, "unknown parameter");
      }
    }
    read_optional(p, "sigma", "params", s.params.sigma, as_number);
    read_optional(p, "alpha_v", "params", s.params.alpha_v, as_number);
    read_optional(p, "beta", "params", s.params.beta, as_number);
    read_optional(p, "alpha_l", "params", s.params.alpha_l, as_number);
    read_optional(p, "eps_u", "params", s.params.eps_u, as_number);
    read_optional(p, "delta", "params", s.params.delta, as_number);
    read_optional(p, "lambda", "params", s.params.lambda, as_number);
    read_optional(p, "zeta", "params", s.params.zeta, as_number);
  }
  read_optional(j, "seed", "", s.seed, as_u64);
  s.validate();
}

Tensor random_values(const AttentionMap& a, double scale, SeededRng& rng) {
  check_square_support(a);
  Tensor out(a.weights.shape());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      if (in_support(a.causal, r, c)) out.at(r, c) = rng.uniform() * scale;
    }
  }
  return out;
}

Tensor uniform_values(const AttentionMap& a, double perturb) {
  check_square_support(a);
  Tensor out(a.weights.shape());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double sum = 0.0;
    std::size_t k = 0;
    for (std::size_t c = 0; c < out.cols(); ++c) {
      if (!in_support(a.causal, r, c)) continue;
      sum += a.weights.at(r, c);
      ++k;
    }
    if (k == 0) continue;
    const double value = sum / static_cast<double>(k) + perturb;
    for (std::size_t c = 0; c < out.cols(); ++c) {
      if (in_support(a.causal, r, c)) out.at(r, c) = value;
    }
  }
  return out;
}

Tensor reversed_values(const AttentionMap& a, double offset, MaxScope scope) {
  check_square_support(a);
  const Tensor& w = a.weights;
  auto max_of_row = [&](std::size_t r) {
    double m = kMaskSentinel;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      if (in_support(a.causal, r, c)) m = std::max(m, w.at(r, c));
    }
    return m;
  };
  double global = kMaskSentinel;
  for (std::size_t r = 0; r < w.rows(); ++r) global = std::max(global, max_of_row(r));

  Tensor out(w.shape());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double m = scope == MaxScope::map ? global : max_of_row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) {
      if (in_support(a.causal, r, c)) out.at(r, c) = m - w.at(r, c) + offset;
    }
  }
  return out;
}

Tensor shuffled_values(const AttentionMap& a, SeededRng& rng) {
  check_square_support(a);
  if (a.causal) throw ModalityError("shuffled attention is undefined on causal (language) maps");
  const Tensor& w = a.weights;
  const auto row_perm = rng.permutation(w.rows());
  const auto col_perm = rng.permutation(w.cols());
  Tensor out(w.shape());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) out.at(r, c) = w.at(row_perm[r], col_perm[c]);
  }
  return out;
}

AttentionMap random_attention(const AttentionMap& a, double sigma, double alpha, SeededRng& rng) {
  return with_weights(a, renormalize_rows(random_values(a, sigma * alpha, rng), a.causal));
}

AttentionMap uniform_attention(const AttentionMap& a, double perturb) {
  return with_weights(a, renormalize_rows(uniform_values(a, perturb), a.causal));
}

AttentionMap reversed_attention(const AttentionMap& a, double offset, MaxScope scope) {
  return with_weights(a, renormalize_rows(reversed_values(a, offset, scope), a.causal));
}

AttentionMap shuffled_attention(const AttentionMap& a, Modality modality, SeededRng& rng) {
  if (modality == Modality::language) {
    throw ModalityError("shuffled attention applies to the vision encoder only");
  }
  return with_weights(a, renormalize_rows(shuffled_values(a, rng), a.causal));
}

HookSet make_hooks(const InterventionSpec& spec, const ModelConfig& config, const HookOptions& options) {
  spec.validate();
  HookSet hooks(options.stage);
  const InterventionParams p = spec.params;
  const CounterfactualKind kind = spec.kind;
  const MaxScope scope = options.reversed_scope;

  auto add_modality = [&](Modality m, const LayerRange& range, std::size_t layer_count) {
    if (!spec.targets(m) || range.empty()) return;
    if (range.end > layer_count) {
      throw ConfigError(std::string("layer_range.") + to_string(m),
                        "range end " + std::to_string(range.end) + " exceeds " + std::to_string(layer_count) +
                            " layers");
    }
    const bool vision = m == Modality::vision;
    for (std::size_t layer = range.begin; layer < range.end; ++layer) {
      for (std::size_t head = 0; head < config.heads; ++head) {
        const std::uint64_t seed = spec.seed;
        const std::uint64_t step = options.step, sample = options.sample;
        CounterfactualFn fn = [=](const AttentionMap& natural) -> Tensor {
          SeededRng rng = SeededRng::derived(seed, {modality_tag(m), layer, head, step, sample});
          switch (kind) {
            case CounterfactualKind::random:
              return random_values(natural, vision ? p.sigma * p.alpha_v : p.beta * p.alpha_l, rng);
            case CounterfactualKind::uniform:
              return uniform_values(natural, vision ? p.eps_u : p.delta);
            case CounterfactualKind::reversed:
              return reversed_values(natural, vision ? p.lambda : p.zeta, scope);
            case CounterfactualKind::shuffled:
              return shuffled_values(natural, rng);
          }
          throw InvariantError("unhandled counterfactual kind");
        };
        hooks.set(HookKey{m, layer, head}, std::move(fn));
      }
    }
  };
  add_modality(Modality::vision, spec.vision_layers, config.vision_layers);
  add_modality(Modality::language, spec.language_layers, config.decoder_layers);
  return hooks;
}

}  // namespace causalmm
