#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "causalmm/error.hpp"
#include "causalmm/harness.hpp"

namespace fs = std::filesystem;
using namespace causalmm;

namespace {

void print_log(const RunReport& r) {
  for (const auto& line : r.log) std::cerr << line << "\n";
}

int cmd_gen(std::uint64_t seed, std::size_t cases, double bias, const fs::path& out) {
  const SynthDataset ds = gen_pope_synth(seed, cases, bias);
  save_dataset(ds, out);
  std::printf("wrote %zu cases to %s (bias %s, unbiased accuracy %s, retries %zu)\n", ds.cases.size(),
              out.string().c_str(), csv_number(ds.bias_strength).c_str(), csv_number(ds.unbiased_accuracy).c_str(),
              ds.retries);
  return 0;
}

int cmd_bench(const fs::path& config, const fs::path& out) {
  const RunReport r = run_benchmark(config);
  write_report(r, out);
  print_log(r);
  std::cout << r.csv;
  return 0;
}

int cmd_ablate(const fs::path& config, const fs::path& out) {
  const RunReport r = run_ablation(config);
  write_report(r, out);
  print_log(r);
  std::cout << r.csv;
  return 0;
}

int cmd_scm_check(std::size_t trials, std::uint64_t seed, const std::optional<fs::path>& out) {
  const ScmCheckResult r = run_scm_check(trials, seed);
  if (out) {
    RunReport report;
    report.report = {{"command", "scm-check"}, {"seed", seed}, {"result", to_json(r)}};
    report.csv = "trials,max_abs_diff,confounded_tv,passed\n" + std::to_string(r.trials) + "," +
                 std::to_string(r.max_abs_diff) + "," + csv_number(r.confounded_tv) + "," +
                 (r.passed ? "true" : "false") + "\n";
    write_report(report, *out);
  }
  std::printf("trials %zu max |backdoor - oracle| %.3e confounded TV %.6f: %s\n", r.trials, r.max_abs_diff,
              r.confounded_tv, r.passed ? "ok" : "FAILED");
  if (!r.passed) throw InvariantError("back-door adjustment disagrees with the mutilated-graph oracle");
  return 0;
}

int cmd_decode(const fs::path& config, std::size_t case_index, const std::optional<std::string>& mode,
               const std::optional<fs::path>& out) {
  BenchConfig cfg = parse_bench_config(read_json_file(config), config.parent_path());
  DecodeConfig dc = cfg.decode;
  if (mode) {
    try {
      dc.mode = parse_decode_mode(*mode);
    } catch (const ConfigError& e) {
      throw ConfigError("--mode", e.message());
    }
  }
  dc.validate();
  const SynthDataset ds = load_source(cfg.dataset);
  if (case_index >= ds.cases.size()) {
    throw IndexError("case " + std::to_string(case_index) + " out of range (" + std::to_string(ds.cases.size()) +
                     " cases)");
  }
  const SynthCase& sc = ds.cases[case_index];
  const GenerateResult r = generate_causal(ds.weights, sc.image, sc.prompt, case_config(dc, case_index));

  std::string jsonl;
  for (const auto& step : r.steps) {
    nlohmann::json line = to_json(step);
    line["case"] = case_index;
    jsonl += line.dump() + "\n";
  }
  if (out) {
    fs::create_directories(*out);
    std::ofstream(*out / "steps.jsonl", std::ios::binary | std::ios::trunc) << jsonl;
    const nlohmann::json summary{{"command", "decode"},
                                 {"case", case_index},
                                 {"mode", to_string(dc.mode)},
                                 {"question_object", sc.question_object},
                                 {"label", sc.label == Label::yes ? "yes" : "no"},
                                 {"answer", answer_of(r.tokens) == Label::yes ? "yes" : "no"},
                                 {"tokens", r.tokens}};
    std::ofstream(*out / "report.json", std::ios::binary | std::ios::trunc) << summary.dump(2) << "\n";
  } else {
    std::cout << jsonl;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual-attention causal decoding on a toy multimodal transformer"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t cases = 200;
  double bias = 0.0;
  fs::path out;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic planted-bias dataset");
  gen->add_option("--seed", seed, "Dataset seed")->required();
  gen->add_option("--cases", cases, "Number of cases (even)")->required();
  gen->add_option("--bias", bias, "lm_head_bias on YES")->required();
  gen->add_option("--out", out, "Output directory")->required();

  fs::path config;
  fs::path bench_out;
  auto* bench = app.add_subcommand("bench", "Evaluate decoding modes on a dataset");
  bench->add_option("--config", config, "Benchmark config JSON")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", bench_out, "Output directory")->required();

  fs::path ablate_config;
  fs::path ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Sweep counterfactual kind, layer range, gamma and eps");
  ablate->add_option("--config", ablate_config, "Ablation config JSON")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_out, "Output directory")->required();

  std::size_t trials = 1000;
  std::uint64_t scm_seed = 0;
  std::optional<fs::path> scm_out;
  auto* scm = app.add_subcommand("scm-check", "Check back-door adjustment against the mutilated-graph oracle");
  scm->add_option("--trials", trials, "Number of random SCMs")->required();
  scm->add_option("--seed", scm_seed, "Seed")->required();
  scm->add_option("--out", scm_out, "Optional output directory");

  fs::path decode_config;
  std::size_t case_index = 0;
  std::optional<std::string> mode;
  std::optional<fs::path> decode_out;
  auto* decode = app.add_subcommand("decode", "Dump per-step records for one case");
  decode->add_option("--config", decode_config, "Benchmark config JSON")->required()->check(CLI::ExistingFile);
  decode->add_option("--case", case_index, "Case index")->required();
  decode->add_option("--mode", mode, "Override decode.mode");
  decode->add_option("--out", decode_out, "Write steps.jsonl and report.json here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(seed, cases, bias, out);
    if (*bench) return cmd_bench(config, bench_out);
    if (*ablate) return cmd_ablate(ablate_config, ablate_out);
    if (*scm) return cmd_scm_check(trials, scm_seed, scm_out);
    if (*decode) return cmd_decode(decode_config, case_index, mode, decode_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
