#include "causalmm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <tuple>

#include "causalmm/error.hpp"
#include "causalmm/scm.hpp"
#include "json_util.hpp"

namespace causalmm {

namespace {

using detail::as_bool;
using detail::as_number;
using detail::as_string;
using detail::as_u64;
using detail::join_path;
using detail::require;

constexpr std::uint64_t kDecodeCaseTag = 0x6463617365ULL;
constexpr std::uint64_t kSpecCaseTag = 0x7363617365ULL;
constexpr std::uint64_t kScmTag = 0x73636dULL;

const char* const kSkipReason = "shuffled counterfactual is undefined for language attention (token order carries meaning)";

void reject_unknown(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> known) {
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(join_path(path, key), "unknown field");
    }
  }
}

// Re-roots a ConfigError raised by a nested parser under `path`.
template <typename Fn>
void under(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(join_path(path, e.field()), e.message());
  }
}

DatasetSource parse_source(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  const std::string path = "dataset";
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown(j, path, {"dir", "seed", "cases", "bias"});
  DatasetSource s;
  if (j.contains("dir")) {
    if (j.contains("seed") || j.contains("cases") || j.contains("bias")) {
      throw ConfigError(path, "give either dir or generation parameters, not both");
    }
    std::filesystem::path dir = as_string(j.at("dir"), "dataset.dir");
    s.dir = dir.is_absolute() ? dir : base_dir / dir;
    return s;
  }
  s.seed = as_u64(require(j, "seed", path), "dataset.seed");
  detail::read_optional(j, "cases", path, s.cases, as_u64);
  detail::read_optional(j, "bias", path, s.bias, as_number);
  if (s.cases == 0 || s.cases % 2 != 0) throw ConfigError("dataset.cases", "must be even and positive");
  if (s.bias < 0.0) throw ConfigError("dataset.bias", "must be >= 0");
  return s;
}

nlohmann::json source_json(const DatasetSource& s) {
  if (s.dir) return {{"dir", s.dir->string()}};
  return {{"seed", s.seed}, {"cases", s.cases}, {"bias", s.bias}};
}

std::optional<InterventionSpec> parse_spec(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  InterventionSpec spec;
  under(key, [&] { from_json(j.at(key), spec); });
  return spec;
}

void validate_decode(const DecodeConfig& cfg) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    const bool spec_field = e.field().starts_with("vision_spec") || e.field().starts_with("language_spec");
    if (spec_field) throw;
    throw ConfigError(join_path("decode", e.field()), e.message());
  }
}

nlohmann::json dataset_json(const SynthDataset& ds) {
  return {{"seed", ds.seed},
          {"cases", ds.cases.size()},
          {"bias_strength", ds.bias_strength},
          {"unbiased_accuracy", ds.unbiased_accuracy},
          {"retries", ds.retries}};
}

nlohmann::json decode_echo(const DecodeConfig& cfg) {
  nlohmann::json j = decode_options_to_json(cfg);
  j.erase("mode");
  return j;
}

nlohmann::json spec_json(const std::optional<InterventionSpec>& s) {
  if (!s) return nullptr;
  nlohmann::json j;
  to_json(j, *s);
  return j;
}

std::vector<double> number_list(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<LayerRange> range_list(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of [begin, end]");
  std::vector<LayerRange> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    if (!j[i].is_array() || j[i].size() != 2) throw ConfigError(p, "expected [begin, end]");
    LayerRange r{as_u64(j[i][0], p + "[0]"), as_u64(j[i][1], p + "[1]")};
    if (r.end <= r.begin) throw ConfigError(p, "end must exceed begin");
    out.push_back(r);
  }
  return out;
}

nlohmann::json ranges_json(const std::vector<LayerRange>& rs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rs) j.push_back({r.begin, r.end});
  return j;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void accumulate(EffectSummary& e, const Tensor& orig, const Tensor& cf) {
  const Tensor p = softmax_rows(orig);
  const Tensor q = softmax_rows(cf);
  e.yes += p[kYesToken] - q[kYesToken];
  e.no += p[kNoToken] - q[kNoToken];
  for (std::size_t i = 0; i < p.size(); ++i) e.l1 += std::abs(p[i] - q[i]);
  ++e.steps;
}

void finish(std::optional<EffectSummary>& e) {
  if (!e || e->steps == 0) return;
  const double n = static_cast<double>(e->steps);
  e->yes /= n;
  e->no /= n;
  e->l1 /= n;
}

std::string metrics_csv(const Metrics& m) {
  return csv_number(m.accuracy) + "," + csv_number(m.precision) + "," + csv_number(m.recall) + "," +
         csv_number(m.f1);
}

nlohmann::json effect_json(const std::optional<EffectSummary>& e) {
  if (!e) return nullptr;
  return to_json(*e);
}

}  // namespace

nlohmann::json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot read " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", file.string() + ": " + e.what());
  }
}

BenchConfig parse_bench_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  reject_unknown(j, "", {"dataset", "modes", "decode", "vision_spec", "language_spec", "emit_steps"});
  BenchConfig cfg;
  cfg.dataset = parse_source(require(j, "dataset", ""), base_dir);
  if (j.contains("modes")) {
    const auto& modes = j.at("modes");
    if (!modes.is_array() || modes.empty()) throw ConfigError("modes", "expected a non-empty array");
    cfg.modes.clear();
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const std::string p = "modes[" + std::to_string(i) + "]";
      DecodeMode m{};
      try {
        m = parse_decode_mode(as_string(modes[i], p));
      } catch (const ConfigError& e) {
        throw ConfigError(p, e.message());
      }
      if (std::find(cfg.modes.begin(), cfg.modes.end(), m) != cfg.modes.end()) {
        throw ConfigError(p, "duplicate mode");
      }
      cfg.modes.push_back(m);
    }
  }
  if (j.contains("decode")) decode_options_from_json(j.at("decode"), cfg.decode, "decode");
  cfg.decode.vision_spec = parse_spec(j, "vision_spec");
  cfg.decode.language_spec = parse_spec(j, "language_spec");
  detail::read_optional(j, "emit_steps", "", cfg.emit_steps, as_bool);
  for (DecodeMode m : cfg.modes) {
    DecodeConfig c = cfg.decode;
    c.mode = m;
    validate_decode(c);
  }
  return cfg;
}

AblationConfig parse_ablation_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  reject_unknown(j, "", {"dataset", "decode", "params", "seed", "sweep"});
  AblationConfig cfg;
  cfg.dataset = parse_source(require(j, "dataset", ""), base_dir);
  if (j.contains("decode")) decode_options_from_json(j.at("decode"), cfg.decode, "decode");
  if (j.contains("params")) {
    // Reuse the spec parser for the shared parameter block.
    InterventionSpec probe;
    under("", [&] { from_json({{"modality", "both"}, {"kind", "random"}, {"params", j.at("params")}}, probe); });
    cfg.params = probe.params;
  }
  detail::read_optional(j, "seed", "", cfg.spec_seed, as_u64);

  const auto& sw = require(j, "sweep", "");
  if (!sw.is_object()) throw ConfigError("sweep", "expected an object");
  reject_unknown(sw, "sweep", {"modalities", "kinds", "layer_ranges", "gammas", "epsilons"});
  SweepGrid& g = cfg.sweep;

  const auto& mods = require(sw, "modalities", "sweep");
  if (!mods.is_array() || mods.empty()) throw ConfigError("sweep.modalities", "expected a non-empty array");
  for (std::size_t i = 0; i < mods.size(); ++i) {
    const std::string p = "sweep.modalities[" + std::to_string(i) + "]";
    const std::string s = as_string(mods[i], p);
    Modality m;
    if (s == "vision") m = Modality::vision;
    else if (s == "language") m = Modality::language;
    else throw ConfigError(p, "expected vision or language");
    if (std::find(g.modalities.begin(), g.modalities.end(), m) != g.modalities.end()) {
      throw ConfigError(p, "duplicate modality");
    }
    g.modalities.push_back(m);
  }

  const auto& kinds = require(sw, "kinds", "sweep");
  if (!kinds.is_array() || kinds.empty()) throw ConfigError("sweep.kinds", "expected a non-empty array");
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const std::string p = "sweep.kinds[" + std::to_string(i) + "]";
    CounterfactualKind k{};
    try {
      k = parse_kind(as_string(kinds[i], p));
    } catch (const ConfigError& e) {
      throw ConfigError(p, e.message());
    }
    if (std::find(g.kinds.begin(), g.kinds.end(), k) != g.kinds.end()) throw ConfigError(p, "duplicate kind");
    g.kinds.push_back(k);
  }

  const auto& ranges = require(sw, "layer_ranges", "sweep");
  if (!ranges.is_object()) throw ConfigError("sweep.layer_ranges", "expected an object keyed by modality");
  reject_unknown(ranges, "sweep.layer_ranges", {"vision", "language"});
  for (Modality m : g.modalities) {
    const std::string key = to_string(m);
    auto& out = m == Modality::vision ? g.vision_ranges : g.language_ranges;
    out = range_list(require(ranges, key, "sweep.layer_ranges"), "sweep.layer_ranges." + key);
  }

  g.gammas = sw.contains("gammas") ? number_list(sw.at("gammas"), "sweep.gammas")
                                   : std::vector<double>{cfg.decode.gamma};
  g.epsilons = sw.contains("epsilons") ? number_list(sw.at("epsilons"), "sweep.epsilons")
                                       : std::vector<double>{cfg.decode.eps};
  for (std::size_t i = 0; i < g.gammas.size(); ++i) {
    if (g.gammas[i] < 0.0) throw ConfigError("sweep.gammas[" + std::to_string(i) + "]", "must be >= 0");
  }
  for (std::size_t i = 0; i < g.epsilons.size(); ++i) {
    if (!(g.epsilons[i] > 0.0 && g.epsilons[i] <= 1.0)) {
      throw ConfigError("sweep.epsilons[" + std::to_string(i) + "]", "must lie in (0, 1]");
    }
  }
  DecodeConfig base = cfg.decode;
  base.mode = DecodeMode::regular;
  validate_decode(base);
  return cfg;
}

SynthDataset load_source(const DatasetSource& source) {
  if (source.dir) return load_dataset(*source.dir);
  return gen_pope_synth(source.seed, source.cases, source.bias);
}

DecodeConfig case_config(const DecodeConfig& cfg, std::size_t case_index) {
  DecodeConfig c = cfg;
  c.seed = SeededRng::derived(cfg.seed, {kDecodeCaseTag, case_index}).next_u64();
  if (c.vision_spec) c.vision_spec->seed = SeededRng::derived(cfg.vision_spec->seed, {kSpecCaseTag, case_index}).next_u64();
  if (c.language_spec) {
    c.language_spec->seed = SeededRng::derived(cfg.language_spec->seed, {kSpecCaseTag, case_index}).next_u64();
  }
  return c;
}

nlohmann::json to_json(const EffectSummary& e) {
  return {{"steps", e.steps}, {"yes", e.yes}, {"no", e.no}, {"l1", e.l1}};
}

Evaluation evaluate(const SynthDataset& ds, const DecodeConfig& cfg, bool keep_steps) {
  Evaluation ev;
  std::vector<Label> labels;
  if (cfg.uses_vision()) ev.vision_effect.emplace();
  if (cfg.uses_language()) ev.language_effect.emplace();
  for (std::size_t i = 0; i < ds.cases.size(); ++i) {
    const SynthCase& sc = ds.cases[i];
    GenerateResult r;
    const std::string where = "case " + std::to_string(i) + ": ";
    try {
      r = generate_causal(ds.weights, sc.image, sc.prompt, case_config(cfg, i));
    } catch (const ConfigError&) {
      throw;
    } catch (const ValidationError& e) {
      throw InputError(where + e.what());
    } catch (const InvariantError& e) {
      throw InvariantError(where + e.what());
    }
    ev.predictions.push_back(answer_of(r.tokens));
    labels.push_back(sc.label);
    for (const auto& step : r.steps) {
      if (step.cf_vision_logits) accumulate(*ev.vision_effect, step.original_logits, *step.cf_vision_logits);
      if (step.cf_language_logits) accumulate(*ev.language_effect, step.original_logits, *step.cf_language_logits);
      if (keep_steps) {
        nlohmann::json line = to_json(step);
        line["case"] = i;
        ev.steps_jsonl.push_back(line.dump());
      }
    }
  }
  finish(ev.vision_effect);
  finish(ev.language_effect);
  ev.metrics = eval_metrics(ev.predictions, labels);
  return ev;
}

RunReport run_benchmark(const BenchConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const SynthDataset ds = load_source(cfg.dataset);
  RunReport out;
  out.csv = "mode,accuracy,precision,recall,f1\n";
  nlohmann::json modes = nlohmann::json::array();
  for (DecodeMode m : cfg.modes) {
    DecodeConfig c = cfg.decode;
    c.mode = m;
    Evaluation ev = evaluate(ds, c, cfg.emit_steps);
    for (auto& line : ev.steps_jsonl) {
      auto j = nlohmann::json::parse(line);
      j["mode"] = to_string(m);
      out.steps_jsonl.push_back(j.dump());
    }
    modes.push_back({{"mode", to_string(m)},
                     {"metrics", to_json(ev.metrics)},
                     {"p_effect", {{"vision", effect_json(ev.vision_effect)}, {"language", effect_json(ev.language_effect)}}}});
    out.csv += to_string(m) + "," + metrics_csv(ev.metrics) + "\n";
    out.log.push_back(to_string(m) + ": accuracy " + csv_number(ev.metrics.accuracy));
  }
  nlohmann::json mode_names = nlohmann::json::array();
  for (DecodeMode m : cfg.modes) mode_names.push_back(to_string(m));
  out.report = {{"command", "bench"},
                {"config",
                 {{"dataset", source_json(cfg.dataset)},
                  {"modes", mode_names},
                  {"decode", decode_echo(cfg.decode)},
                  {"vision_spec", spec_json(cfg.decode.vision_spec)},
                  {"language_spec", spec_json(cfg.decode.language_spec)},
                  {"emit_steps", cfg.emit_steps}}},
                {"dataset", dataset_json(ds)},
                {"modes", modes}};
  out.report["wall_clock_seconds"] = seconds_since(start);
  return out;
}

RunReport run_benchmark(const std::filesystem::path& cfg_file) {
  return run_benchmark(parse_bench_config(read_json_file(cfg_file), cfg_file.parent_path()));
}

RunReport run_ablation(const AblationConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const SynthDataset ds = load_source(cfg.dataset);
  const SweepGrid& g = cfg.sweep;
  const ModelConfig& mc = ds.weights.config;
  for (std::size_t i = 0; i < g.vision_ranges.size(); ++i) {
    if (g.vision_ranges[i].end > mc.vision_layers) {
      throw ConfigError("sweep.layer_ranges.vision[" + std::to_string(i) + "]", "exceeds the vision layer count");
    }
  }
  for (std::size_t i = 0; i < g.language_ranges.size(); ++i) {
    if (g.language_ranges[i].end > mc.decoder_layers) {
      throw ConfigError("sweep.layer_ranges.language[" + std::to_string(i) + "]", "exceeds the decoder layer count");
    }
  }

  RunReport out;
  DecodeConfig base = cfg.decode;
  base.mode = DecodeMode::regular;
  const Metrics baseline = evaluate(ds, base).metrics;

  using Key = std::tuple<std::string, std::string, std::size_t, std::size_t, double, double>;
  std::vector<std::pair<Key, Metrics>> rows;
  std::vector<Key> skipped;
  for (Modality m : g.modalities) {
    for (CounterfactualKind k : g.kinds) {
      for (const LayerRange& r : m == Modality::vision ? g.vision_ranges : g.language_ranges) {
        for (double gamma : g.gammas) {
          for (double eps : g.epsilons) {
            Key key{to_string(m), to_string(k), r.begin, r.end, gamma, eps};
            if (m == Modality::language && k == CounterfactualKind::shuffled) {
              skipped.push_back(key);
              continue;
            }
            InterventionSpec spec;
            spec.kind = k;
            spec.params = cfg.params;
            spec.seed = cfg.spec_seed;
            DecodeConfig c = cfg.decode;
            c.gamma = gamma;
            c.eps = eps;
            if (m == Modality::vision) {
              spec.modality = InterventionModality::vision;
              spec.vision_layers = r;
              c.mode = DecodeMode::vision;
              c.vision_spec = spec;
            } else {
              spec.modality = InterventionModality::language;
              spec.language_layers = r;
              c.mode = DecodeMode::language;
              c.language_spec = spec;
            }
            rows.emplace_back(key, evaluate(ds, c).metrics);
          }
        }
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::sort(skipped.begin(), skipped.end());

  auto key_json = [](const Key& k) {
    return nlohmann::json{{"modality", std::get<0>(k)}, {"kind", std::get<1>(k)}, {"layer_lo", std::get<2>(k)},
                          {"layer_hi", std::get<3>(k)}, {"gamma", std::get<4>(k)},  {"eps", std::get<5>(k)}};
  };
  out.csv = "modality,kind,layer_lo,layer_hi,gamma,eps,accuracy,precision,recall,f1\n";
  nlohmann::json row_json = nlohmann::json::array();
  for (const auto& [k, metrics] : rows) {
    nlohmann::json j = key_json(k);
    j["metrics"] = to_json(metrics);
    row_json.push_back(j);
    out.csv += std::get<0>(k) + "," + std::get<1>(k) + "," + std::to_string(std::get<2>(k)) + "," +
               std::to_string(std::get<3>(k)) + "," + csv_number(std::get<4>(k)) + "," + csv_number(std::get<5>(k)) +
               "," + metrics_csv(metrics) + "\n";
  }
  nlohmann::json skip_json = nlohmann::json::array();
  for (const auto& k : skipped) {
    nlohmann::json j = key_json(k);
    j["reason"] = kSkipReason;
    skip_json.push_back(j);
    out.log.push_back("skipped " + std::get<0>(k) + "/" + std::get<1>(k) + " layers [" +
                      std::to_string(std::get<2>(k)) + "," + std::to_string(std::get<3>(k)) + ") gamma " +
                      csv_number(std::get<4>(k)) + " eps " + csv_number(std::get<5>(k)) + ": " + kSkipReason);
  }

  nlohmann::json mods = nlohmann::json::array();
  for (Modality m : g.modalities) mods.push_back(to_string(m));
  nlohmann::json kinds = nlohmann::json::array();
  for (CounterfactualKind k : g.kinds) kinds.push_back(to_string(k));
  nlohmann::json params;
  {
    InterventionSpec probe;
    probe.params = cfg.params;
    nlohmann::json pj;
    to_json(pj, probe);
    params = pj.at("params");
  }
  out.report = {{"command", "ablate"},
                {"config",
                 {{"dataset", source_json(cfg.dataset)},
                  {"decode", decode_echo(cfg.decode)},
                  {"params", params},
                  {"seed", cfg.spec_seed},
                  {"sweep",
                   {{"modalities", mods},
                    {"kinds", kinds},
                    {"layer_ranges", {{"vision", ranges_json(g.vision_ranges)}, {"language", ranges_json(g.language_ranges)}}},
                    {"gammas", g.gammas},
                    {"epsilons", g.epsilons}}}}},
                {"dataset", dataset_json(ds)},
                {"baseline", {{"mode", "regular"}, {"metrics", to_json(baseline)}}},
                {"rows", row_json},
                {"skipped", skip_json}};
  out.report["wall_clock_seconds"] = seconds_since(start);
  out.log.push_back(std::to_string(rows.size()) + " grid points evaluated, " + std::to_string(skipped.size()) +
                    " skipped");
  return out;
}

RunReport run_ablation(const std::filesystem::path& cfg_file) {
  return run_ablation(parse_ablation_config(read_json_file(cfg_file), cfg_file.parent_path()));
}

void write_report(const RunReport& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream f(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write " + (out_dir / name).string());
    f << text;
  };
  write("report.json", r.report.dump(2) + "\n");
  write("metrics.csv", r.csv);
  if (!r.steps_jsonl.empty()) {
    std::string text;
    for (const auto& line : r.steps_jsonl) text += line + "\n";
    write("steps.jsonl", text);
  }
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::optional<double> find_moderate_bias(const SynthDataset& ds, double lo, double hi, double step, double max_bias) {
  std::optional<double> best;
  double best_gap = 0.0;
  const double mid = 0.5 * (lo + hi);
  for (std::size_t k = 0; static_cast<double>(k) * step <= max_bias; ++k) {
    const double bias = static_cast<double>(k) * step;
    const double acc = evaluate(with_bias(ds, bias), DecodeConfig{}).metrics.accuracy;
    if (acc < lo) break;
    if (acc <= hi && (!best || std::abs(acc - mid) < best_gap)) {
      best = bias;
      best_gap = std::abs(acc - mid);
    }
  }
  return best;
}

DiscreteSCM confounded_scm() {
  DiscreteSCM scm;
  scm.p_m = Tensor::vector({0.5, 0.5});
  scm.p_a_given_m = Tensor::matrix({{0.9, 0.1}, {0.1, 0.9}});
  // P(o = 1 | a, m) = 0.1 + 0.1 a + 0.7 m
  std::vector<double> table;
  for (int a = 0; a < 2; ++a) {
    for (int m = 0; m < 2; ++m) {
      const double p1 = 0.1 + 0.1 * a + 0.7 * m;
      table.push_back(1.0 - p1);
      table.push_back(p1);
    }
  }
  scm.p_o_given_a_m = Tensor({2, 2, 2}, table);
  scm.validate();
  return scm;
}

ScmCheckResult run_scm_check(std::size_t trials, std::uint64_t seed) {
  ScmCheckResult r;
  r.trials = trials;
  SeededRng card_rng = SeededRng::derived(seed, {kScmTag});
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t ca = 2 + card_rng.index(4);
    const std::size_t cm = 2 + card_rng.index(4);
    const std::size_t co = 2 + card_rng.index(4);
    const DiscreteSCM scm = random_scm(SeededRng::derived(seed, {kScmTag, t}).next_u64(), ca, cm, co);
    for (std::size_t a = 0; a < ca; ++a) {
      const Distribution adj = backdoor_adjust(scm, a);
      const Distribution oracle = intervene_oracle(scm, a);
      for (std::size_t o = 0; o < co; ++o) r.max_abs_diff = std::max(r.max_abs_diff, std::abs(adj[o] - oracle[o]));
    }
  }
  const DiscreteSCM c = confounded_scm();
  for (std::size_t a = 0; a < c.card_a; ++a) {
    r.confounded_tv = std::max(r.confounded_tv, total_variation(observational_conditional(c, a), backdoor_adjust(c, a)));
  }
  r.passed = r.max_abs_diff <= 1e-12 && r.confounded_tv > 0.05;
  return r;
}

nlohmann::json to_json(const ScmCheckResult& r) {
  return {{"trials", r.trials}, {"max_abs_diff", r.max_abs_diff}, {"confounded_tv", r.confounded_tv}, {"passed", r.passed}};
}

}  // namespace causalmm
