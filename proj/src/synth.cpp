#include "causalmm/synth.hpp"

#include <cmath>
#include <fstream>

#include "causalmm/error.hpp"
#include "causalmm/rng.hpp"

namespace causalmm {

namespace {

// Residual layout of the probe circuit (d_model = 32, in_dim = 8). Every
// constant flag is written as a +/- pair so layer norm's mean subtraction
// leaves the content dimensions untouched.
//   vision:  [0, 8) patch content, [8, 16) content copied by attention,
//            30/31 patch flag pair
//   decoder: [0, 8) visual content, [8, 16) object query, 16/22 visual flag,
//            17/23 text flag, 18/24 BOS flag, 20/25 attention mass on visual
//            tokens, 21/26 attention mass on BOS
constexpr std::size_t kContent = 8;
constexpr std::size_t kVisionCopy = 8;
constexpr std::size_t kVisionFlag = 31;
constexpr std::size_t kVisionFlagNeg = 30;
constexpr std::size_t kQuery = 8;
constexpr std::size_t kVisualFlag = 16;
constexpr std::size_t kTextFlag = 17;
constexpr std::size_t kBosFlag = 18;
constexpr std::size_t kVisualMass = 20;
constexpr std::size_t kBosMass = 21;
constexpr std::size_t kVisualFlagNeg = 22;
constexpr std::size_t kTextFlagNeg = 23;
constexpr std::size_t kBosFlagNeg = 24;
constexpr std::size_t kVisualMassNeg = 25;
constexpr std::size_t kBosMassNeg = 26;

constexpr double kWeightNoise = 0.1;  // scale applied to the random init
constexpr double kVisionFlagValue = 3.0;
constexpr double kSelfFocus = 4.0;  // vision query gain
constexpr double kCopyGain = 2.0;
constexpr double kProjectGain = 2.0;
constexpr double kProjectFlag = 2.0;
constexpr double kTextFlagValue = 2.0;
constexpr double kBosFlagValue = 2.0;
constexpr double kQueryScale = 2.0;
constexpr double kMatchGain = 5.0;
constexpr double kSinkGain = 2.5;
constexpr double kMassGain = 3.0;
constexpr double kAnswerGain = 0.4;
constexpr double kAnswerBase = 3.0;

constexpr double kBackground = 0.25;
constexpr double kAmplitudeLo = 1.0;
constexpr double kAmplitudeHi = 2.0;

constexpr std::size_t kMaxRetries = 10;
constexpr std::size_t kCalibrationCases = 64;
constexpr double kRequiredAccuracy = 0.9;

constexpr std::uint64_t kSignatureTag = 0x736967ULL;
constexpr std::uint64_t kCaseTag = 0x63617365ULL;
constexpr std::uint64_t kCalibrationTag = 0x63616cULL;

void scale_all(ModelWeights& w, double s) {
  for_each_tensor(w, [&](const std::string& name, Tensor& t) {
    if (name.find("ln") != std::string::npos) return;
    for (double& v : t.data()) v *= s;
  });
}

Tensor draw_signatures(SeededRng& rng, std::size_t n, std::size_t dim) {
  Tensor sig({n, dim});
  for (std::size_t o = 0; o < n; ++o) {
    auto row = sig.row(o);
    double norm = 0.0;
    for (double& v : row) {
      v = rng.normal();
      norm += v * v;
    }
    // Zero-mean rows survive layer norm's mean subtraction unchanged; then
    // Gram-Schmidt against the earlier signatures.
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(dim);
    for (double& v : row) v -= mean;
    for (std::size_t p = 0; p < o; ++p) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += row[i] * sig.at(p, i);
      for (std::size_t i = 0; i < dim; ++i) row[i] -= dot * sig.at(p, i);
    }
    norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : row) v /= norm;
  }
  return sig;
}

// Clears head 0 of a layer so only planted entries drive it.
void clear_head0(LayerWeights& l, std::size_t head_dim) {
  for (std::size_t r = 0; r < l.wq.rows(); ++r) {
    for (std::size_t c = 0; c < head_dim; ++c) {
      l.wq.at(r, c) = 0.0;
      l.wk.at(r, c) = 0.0;
      l.wv.at(r, c) = 0.0;
    }
  }
  for (std::size_t r = 0; r < head_dim; ++r) {
    for (std::size_t c = 0; c < l.wo.cols(); ++c) l.wo.at(r, c) = 0.0;
  }
}

void plant_circuit(ModelWeights& w, const Tensor& signatures, double threshold) {
  const ModelConfig& c = w.config;
  scale_all(w, kWeightNoise);
  clear_head0(w.vision[0], c.head_dim());
  clear_head0(w.decoder[0], c.head_dim());
  w.projector = Tensor::zeros({c.d_model, c.d_model});
  for (std::size_t j = 0; j < c.d_model; ++j) {
    w.token_embed.at(kBosToken, j) = 0.0;
    for (std::size_t o = 0; o < signatures.rows(); ++o) w.token_embed.at(object_token(o), j) = 0.0;
    w.lm_head.at(j, kYesToken) = 0.0;
    w.lm_head.at(j, kNoToken) = 0.0;
  }

  for (std::size_t i = 0; i < c.in_dim; ++i) {
    for (std::size_t j = 0; j < c.d_model; ++j) w.patch_embed.at(i, j) = i == j ? 1.0 : w.patch_embed.at(i, j);
  }
  w.patch_bias[kVisionFlag] = kVisionFlagValue;
  w.patch_bias[kVisionFlagNeg] = -kVisionFlagValue;

  // Vision layer 0, head 0: content-based self focus that copies content.
  LayerWeights& v0 = w.vision[0];
  for (std::size_t i = 0; i < kContent; ++i) {
    v0.wq.at(i, i) = kSelfFocus;
    v0.wk.at(i, i) = 1.0;
    v0.wv.at(i, i) = 1.0;
    v0.wo.at(i, kVisionCopy + i) = kCopyGain;
    w.projector.at(kVisionCopy + i, i) = kProjectGain;
  }
  w.projector.at(kVisionFlag, kVisualFlag) = kProjectFlag;
  w.projector.at(kVisionFlag, kVisualFlagNeg) = -kProjectFlag;

  // Token embeddings: BOS is the attention sink, objects carry a query.
  auto set_row = [&](TokenId t, std::size_t dim, double value) { w.token_embed.at(t, dim) = value; };
  set_row(kBosToken, kTextFlag, kTextFlagValue);
  set_row(kBosToken, kTextFlagNeg, -kTextFlagValue);
  set_row(kBosToken, kBosFlag, kBosFlagValue);
  set_row(kBosToken, kBosFlagNeg, -kBosFlagValue);
  for (std::size_t o = 0; o < signatures.rows(); ++o) {
    const TokenId t = object_token(o);
    for (std::size_t i = 0; i < kContent; ++i) set_row(t, kQuery + i, kQueryScale * signatures.at(o, i));
    set_row(t, kTextFlag, kTextFlagValue);
    set_row(t, kTextFlagNeg, -kTextFlagValue);
  }

  // Decoder layer 0, head 0: the object query matches visual content
  // against the BOS sink; values record where the mass went.
  LayerWeights& d0 = w.decoder[0];
  for (std::size_t i = 0; i < kContent; ++i) {
    d0.wq.at(kQuery + i, i) = kMatchGain;
    d0.wk.at(i, i) = 1.0;
  }
  d0.wq.at(kTextFlag, kContent) = kSinkGain;
  d0.wk.at(kBosFlag, kContent) = 1.0;
  d0.wv.at(kVisualFlag, 0) = 1.0;
  d0.wv.at(kBosFlag, 1) = 1.0;
  d0.wo.at(0, kVisualMass) = kMassGain;
  d0.wo.at(0, kVisualMassNeg) = -kMassGain;
  d0.wo.at(1, kBosMass) = kMassGain;
  d0.wo.at(1, kBosMassNeg) = -kMassGain;

  // Read-out: YES and NO dominate the vocabulary; their difference tracks
  // visual mass minus sink mass, shifted by the calibrated threshold.
  w.lm_head.at(kVisualMass, kYesToken) = kAnswerGain;
  w.lm_head.at(kBosMass, kYesToken) = -kAnswerGain;
  w.lm_head.at(kVisualMass, kNoToken) = -kAnswerGain;
  w.lm_head.at(kBosMass, kNoToken) = kAnswerGain;
  w.lm_head.at(kTextFlag, kYesToken) = kAnswerBase - threshold;
  w.lm_head.at(kTextFlag, kNoToken) = kAnswerBase + threshold;
}

SynthCase make_case(SeededRng& rng, const Tensor& signatures, const ModelConfig& c, Label label) {
  const std::size_t cells = c.visual_tokens();
  const std::size_t n_obj = signatures.rows();
  SynthCase sc;
  sc.label = label;
  sc.question_object = rng.index(n_obj);
  sc.prompt = {kBosToken, object_token(sc.question_object)};
  sc.image = Tensor({cells, c.in_dim});
  for (auto& v : sc.image.data()) v = kBackground * rng.normal();

  std::vector<std::size_t> objects;
  if (label == Label::yes) objects.push_back(sc.question_object);
  const std::size_t distractors = 1 + rng.index(2);
  for (std::size_t k = 0; k < distractors; ++k) {
    std::size_t o = rng.index(n_obj - 1);
    if (o >= sc.question_object) ++o;
    objects.push_back(o);
  }
  const auto placement = rng.permutation(cells);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const double amplitude = kAmplitudeLo + (kAmplitudeHi - kAmplitudeLo) * rng.uniform();
    auto cell = sc.image.row(placement[k]);
    for (std::size_t i = 0; i < c.in_dim; ++i) cell[i] += amplitude * signatures.at(objects[k], i);
  }
  return sc;
}

std::vector<SynthCase> make_cases(std::uint64_t seed, std::uint64_t tag, std::size_t retry, std::size_t n,
                                  const Tensor& signatures, const ModelConfig& c) {
  std::vector<SynthCase> cases;
  cases.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SeededRng rng = SeededRng::derived(seed, {tag, retry, i});
    cases.push_back(make_case(rng, signatures, c, i % 2 == 0 ? Label::yes : Label::no));
  }
  return cases;
}

double yes_margin(const ModelWeights& w, const SynthCase& sc) {
  const ForwardTrace t = forward(w, sc.image, sc.prompt, HookSet{});
  return t.logits[kYesToken] - t.logits[kNoToken];
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Picks the threshold that centers the YES-NO margin between the two
// classes of a held-out calibration set.
double calibrate_threshold(const ModelWeights& base, const Tensor& signatures, std::uint64_t seed, std::size_t retry) {
  const auto cal = make_cases(seed, kCalibrationTag, retry, kCalibrationCases, signatures, base.config);
  auto imbalance = [&](double threshold) {
    ModelWeights w = base;
    plant_circuit(w, signatures, threshold);
    std::vector<double> yes, no;
    for (const auto& sc : cal) (sc.label == Label::yes ? yes : no).push_back(yes_margin(w, sc));
    return median(yes) + median(no);
  };
  double lo = -20.0, hi = 20.0;
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (imbalance(mid) > 0.0) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double regular_accuracy(const ModelWeights& w, const std::vector<SynthCase>& cases) {
  DecodeConfig cfg;
  std::size_t correct = 0;
  for (const auto& sc : cases) {
    const auto result = generate_causal(w, sc.image, sc.prompt, cfg);
    if (answer_of(result.tokens) == sc.label) ++correct;
  }
  return cases.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(cases.size());
}

nlohmann::json tensor_json(const Tensor& t) { return nlohmann::json{{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

Label answer_of(const std::vector<TokenId>& generated) {
  return !generated.empty() && generated.front() == kYesToken ? Label::yes : Label::no;
}

SynthDataset gen_pope_synth(std::uint64_t seed, std::size_t n_cases, double bias_strength) {
  if (n_cases == 0 || n_cases % 2 != 0) throw InputError("n_cases must be a positive even number");
  if (!std::isfinite(bias_strength) || bias_strength < 0.0) throw InputError("bias_strength must be >= 0");

  const ModelConfig config;
  const ModelWeights base = init_model(config, seed);
  for (std::size_t retry = 0; retry < kMaxRetries; ++retry) {
    SeededRng sig_rng = SeededRng::derived(seed, {kSignatureTag, retry});
    Tensor signatures = draw_signatures(sig_rng, kSynthObjects, config.in_dim);
    const double threshold = calibrate_threshold(base, signatures, seed, retry);

    SynthDataset ds;
    ds.seed = seed;
    ds.weights = base;
    plant_circuit(ds.weights, signatures, threshold);
    ds.signatures = std::move(signatures);
    ds.cases = make_cases(seed, kCaseTag, retry, n_cases, ds.signatures, config);
    ds.retries = retry;
    ds.unbiased_accuracy = regular_accuracy(ds.weights, ds.cases);
    if (ds.unbiased_accuracy > kRequiredAccuracy) return with_bias(std::move(ds), bias_strength);
  }
  throw GenerationError("unbiased model failed to separate the classes after " + std::to_string(kMaxRetries) +
                        " signature draws");
}

SynthDataset with_bias(SynthDataset dataset, double bias_strength) {
  if (!std::isfinite(bias_strength) || bias_strength < 0.0) throw InputError("bias_strength must be >= 0");
  dataset.bias_strength = bias_strength;
  dataset.weights.lm_head_bias = Tensor::zeros({dataset.weights.config.vocab});
  dataset.weights.lm_head_bias[kYesToken] = bias_strength;
  return dataset;
}

void save_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_weights(ds.weights, dir / "weights");
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& sc : ds.cases) {
    cases.push_back({{"image", tensor_json(sc.image)},
                     {"question_object", sc.question_object},
                     {"label", sc.label == Label::yes ? "yes" : "no"},
                     {"prompt", sc.prompt}});
  }
  nlohmann::json j{{"seed", ds.seed},
                   {"bias_strength", ds.bias_strength},
                   {"retries", ds.retries},
                   {"unbiased_accuracy", ds.unbiased_accuracy},
                   {"signatures", tensor_json(ds.signatures)},
                   {"cases", cases}};
  std::ofstream(dir / "dataset.json", std::ios::trunc) << j.dump() << "\n";
}

SynthDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw InputError("cannot read " + (dir / "dataset.json").string());
  SynthDataset ds;
  try {
    nlohmann::json j;
    in >> j;
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.bias_strength = j.at("bias_strength").get<double>();
    ds.retries = j.at("retries").get<std::size_t>();
    ds.unbiased_accuracy = j.at("unbiased_accuracy").get<double>();
    ds.signatures = tensor_from_json(j.at("signatures"));
    for (const auto& c : j.at("cases")) {
      SynthCase sc;
      sc.image = tensor_from_json(c.at("image"));
      sc.question_object = c.at("question_object").get<std::size_t>();
      const auto label = c.at("label").get<std::string>();
      if (label != "yes" && label != "no") throw InputError("case label must be yes or no");
      sc.label = label == "yes" ? Label::yes : Label::no;
      sc.prompt = c.at("prompt").get<std::vector<TokenId>>();
      ds.cases.push_back(std::move(sc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed dataset.json: ") + e.what());
  }
  ds.weights = load_weights(dir / "weights");
  return ds;
}

}  // namespace causalmm
