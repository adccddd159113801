// saaa: train, evaluate, ablate and inspect the stacked-attention VQA model.
//
//   saaa synth  --out-dir data --n 32 --grid 4x4 --depth 8
//   saaa train  --data-dir data --out-dir run --config toy.cfg
//   saaa eval   --data-dir data --checkpoint run/final.saac --report run/report.json
//   saaa ablate --data-dir data --out-dir sweep --suite suite.txt
//   saaa export-attention --data-dir data --checkpoint run/final.saac --questions 1,2 --out-dir maps
//
// Exit codes: 0 success, 1 partial failure, 2 configuration error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "saaa/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kConfig = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string data_dir = ".";
  std::string out_dir = "out";
  std::string config;
};

saaa::TrainConfig load_train_config(const Globals& g) {
  saaa::TrainConfig cfg;
  if (!g.config.empty()) cfg = saaa::load_config(g.config, cfg);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw saaa::ConfigError("grid must look like 4x4, got " + text);
  return {saaa::detail::parse_number<std::size_t>("grid", text.substr(0, x)),
          saaa::detail::parse_number<std::size_t>("grid", text.substr(x + 1))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stacked-attention visual question answering"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->group("Global");
  app.add_option("--data-dir", g.data_dir, "Dataset directory (train.jsonl, val.jsonl, features/)")->group("Global");
  app.add_option("--out-dir", g.out_dir, "Output directory")->group("Global");
  app.add_option("--config", g.config, "Config file of key = value lines")->group("Global");
  app.fallthrough();

  auto* train = app.add_subcommand("train", "Train a model");
  std::string resume;
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, report;
  saaa::EvalOptions eval_opts;
  std::string answer_vocab, predictions;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--report", report, "Report JSON path (default <out-dir>/report.json)");
  eval->add_option("--split", eval_opts.split)->check(CLI::IsMember({"train", "val"}));
  eval->add_option("--answer-vocab", answer_vocab, "One answer per line, replacing the checkpoint's list");
  eval->add_option("--predictions", predictions, "Write per-question predictions as JSONL");

  auto* ablate = app.add_subcommand("ablate", "Train every variant of an ablation suite");
  std::string suite_path;
  ablate->add_option("--suite", suite_path)->required();

  auto* exp = app.add_subcommand("export-attention", "Write attention grids and top-5 answers");
  std::vector<std::int64_t> question_ids;
  exp->add_option("--checkpoint", checkpoint)->required();
  exp->add_option("--questions", question_ids, "Question ids")->required()->delimiter(',');

  auto* synth = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  saaa::SynthSpec spec;
  std::string grid = "4x4";
  synth->add_option("--n", spec.examples, "Training records");
  synth->add_option("--n-val", spec.val_examples, "Validation records");
  synth->add_option("--grid", grid, "Feature grid HxW");
  synth->add_option("--depth", spec.depth);
  synth->add_option("--vocab-q", spec.question_vocab, "Question vocabulary size");
  synth->add_option("--answers", spec.answers, "Answer classes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;  // --help is not an error
  }

  try {
    const saaa::DataDir data{g.data_dir};
    if (*train) {
      const auto cfg = load_train_config(g);
      std::optional<std::filesystem::path> from;
      if (!resume.empty()) from = resume;
      const auto outcome = saaa::run_train(cfg, data, g.out_dir, from, &std::cerr);
      if (outcome.skipped_examples) {
        std::cerr << outcome.skipped_examples << " training records have no in-vocabulary answer\n";
      }
      std::cout << outcome.final_checkpoint.string() << "\n";
      return kOk;
    }
    if (*eval) {
      if (!answer_vocab.empty()) eval_opts.answer_vocab = answer_vocab;
      if (!predictions.empty()) eval_opts.predictions = predictions;
      const std::filesystem::path report_path = report.empty() ? std::filesystem::path(g.out_dir) / "report.json" : std::filesystem::path(report);
      const auto result = saaa::run_eval(checkpoint, data, report_path, eval_opts);
      std::cout << result.table();
      for (const auto& e : result.errors) std::cerr << e << "\n";
      return result.errors.empty() ? kOk : kPartial;
    }
    if (*ablate) {
      auto suite = saaa::load_suite(suite_path);
      if (g.seed) suite.base.seed = *g.seed;
      const auto table = saaa::run_ablation(suite, data, g.out_dir, &std::cerr);
      std::cout << table.to_csv();
      return table.failures.empty() ? kOk : kPartial;
    }
    if (*exp) {
      const auto outcome = saaa::run_export_attention(checkpoint, question_ids, data, g.out_dir);
      for (auto id : outcome.unknown) std::cerr << "unknown question id " << id << "\n";
      if (outcome.exported.empty()) return kPartial;
      return kOk;
    }
    if (*synth) {
      if (g.seed) spec.seed = *g.seed;
      std::tie(spec.height, spec.width) = parse_grid(grid);
      const auto dataset = saaa::run_synth(spec, g.out_dir);
      std::cout << dataset.train.size() << " train and " << dataset.val.size() << " val records in " << g.out_dir
                << "\n";
      return kOk;
    }
  } catch (const saaa::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPartial;
  }
  return kOk;
}
