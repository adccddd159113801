#pragma once

// Command implementations shared by the CLI and the integration tests.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "saaa/ablation.hpp"
#include "saaa/checkpoint.hpp"
#include "saaa/dataset.hpp"
#include "saaa/evaluator.hpp"
#include "saaa/export.hpp"
#include "saaa/synth.hpp"
#include "saaa/trainer.hpp"

namespace saaa {

namespace fs = std::filesystem;

using TrainScalar = float;

struct TrainOutcome {
  fs::path final_checkpoint;
  fs::path metrics;
  std::vector<MetricsRow> rows;
  std::size_t skipped_examples = 0;
};

/// Depth of the feature file belonging to the first record.
inline std::size_t feature_depth_of(const DataDir& data, const std::vector<QuestionRecord>& records) {
  if (records.empty()) throw ConfigError("no training records in " + data.train_records().string());
  const auto path = feature_path(data.features(), records.front().image_id);
  if (!fs::exists(path)) throw ConfigError("missing feature file " + path.string());
  return load_feature_map<float>(path).depth;
}

inline std::string checkpoint_name(std::uint64_t step) { return "ckpt_" + std::to_string(step) + ".saac"; }

/// Trains from scratch, or from `resume` when given. Writes metrics.csv,
/// ckpt_<step>.saac at each milestone, and final.saac.
inline TrainOutcome run_train(const TrainConfig& config, const DataDir& data, const fs::path& out_dir,
                              const std::optional<fs::path>& resume = std::nullopt, std::ostream* log = nullptr) {
  config.validate();
  data.check();
  const auto train = data.split("train");
  const auto eval = data.split("val");
  fs::create_directories(out_dir);

  std::optional<Trainer<TrainScalar>> trainer;
  std::optional<FeatureStore<TrainScalar>> features;
  if (resume) {
    auto snap = restore_checkpoint<TrainScalar>(load_checkpoint(*resume));
    const auto prep = snap.model;
    features.emplace(data.features(), [prep](const FeatureMap<TrainScalar>& raw) { return prep.prepare_features(raw); });
    trainer.emplace(Trainer<TrainScalar>::resume(std::move(snap), train, eval, *features));
  } else {
    auto model = build_model<TrainScalar>(config, train, data.has_val() ? &eval : nullptr, feature_depth_of(data, train));
    const auto prep = model;
    features.emplace(data.features(), [prep](const FeatureMap<TrainScalar>& raw) { return prep.prepare_features(raw); });
    trainer.emplace(std::move(model), train, eval, *features);
  }

  TrainOutcome outcome;
  outcome.skipped_examples = trainer->skipped_examples();
  outcome.metrics = out_dir / "metrics.csv";
  outcome.final_checkpoint = out_dir / "final.saac";
  const std::uint64_t total = trainer->model().config().total_steps;
  trainer->run(
      total, [&](const MetricsRow& row) { outcome.rows.push_back(row); },
      [&](const MetricsRow& row) {
        save_checkpoint(trainer->checkpoint(), out_dir / checkpoint_name(row.step));
        if (log) *log << "step " << row.step << " eval accuracy " << *row.eval_accuracy << "\n";
      });
  std::string csv = metrics_header();
  for (const auto& row : outcome.rows) csv += metrics_line(row);
  detail::write_file(outcome.metrics, csv);
  save_checkpoint(trainer->checkpoint(), outcome.final_checkpoint);
  return outcome;
}

inline AnswerVocabulary load_answer_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open answer vocabulary " + path.string());
  std::vector<std::string> answers;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    answers.push_back(normalize_answer(line));
  }
  while (!answers.empty() && answers.back().empty()) answers.pop_back();
  return AnswerVocabulary::from_list(std::move(answers));
}

struct EvalOptions {
  std::string split = "val";
  std::optional<fs::path> answer_vocab;
  std::optional<fs::path> predictions;
};

/// Writes the JSON report to `report_path` and the table next to it (".txt").
inline EvalReport run_eval(const fs::path& checkpoint, const DataDir& data, const fs::path& report_path,
                           const EvalOptions& options = {}) {
  data.check();
  auto snap = restore_checkpoint<TrainScalar>(load_checkpoint(checkpoint));
  auto& model = snap.model;
  if (options.answer_vocab) model.set_answer_vocab(load_answer_list(*options.answer_vocab));
  if (model.answer_vocab().size() > model.config().M) {
    throw ConfigError("checkpoint answer vocabulary exceeds configured M");
  }
  const auto records = data.split(options.split);
  const auto prep = model;
  FeatureStore<TrainScalar> features(data.features(),
                                     [prep](const FeatureMap<TrainScalar>& raw) { return prep.prepare_features(raw); });
  std::vector<Prediction> predictions;
  const auto report = evaluate(model, records, features, &predictions);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  detail::write_file(report_path, report.to_json().dump(2) + "\n");
  auto table_path = report_path;
  table_path.replace_extension(".txt");
  detail::write_file(table_path, report.table());
  if (options.predictions) {
    std::string lines;
    for (const auto& p : predictions) lines += p.to_json().dump() + "\n";
    detail::write_file(*options.predictions, lines);
  }
  return report;
}

/// Trains every variant of the suite; failures are recorded and skipped.
inline MilestoneTable run_ablation(const AblationSuite& suite, const DataDir& data, const fs::path& out_dir,
                                   std::ostream* log = nullptr) {
  data.check();
  MilestoneTable table;
  table.columns = suite.base.effective_milestones();
  for (const auto& name : suite.variants) {
    table.rows.push_back(name);
    try {
      const auto config = suite.variant_config(name);
      const auto outcome = run_train(config, data, out_dir / name);
      for (const auto& row : outcome.rows) {
        if (row.eval_accuracy) table.set(name, row.step, *row.eval_accuracy);
      }
      if (log) *log << name << ": done\n";
    } catch (const std::exception& e) {
      table.failures[name] = e.what();
      if (log) *log << name << ": FAILED: " << e.what() << "\n";
    }
  }
  fs::create_directories(out_dir);
  detail::write_file(out_dir / "ablation.csv", table.to_csv());
  if (!table.failures.empty()) {
    std::string text;
    for (const auto& [name, why] : table.failures) text += name + ": " + why + "\n";
    detail::write_file(out_dir / "failures.txt", text);
  }
  return table;
}

struct ExportOutcome {
  std::vector<std::int64_t> exported;
  std::vector<std::int64_t> unknown;
};

/// Attention grids and top-5 answers for the given questions (looked up in val, then train).
inline ExportOutcome run_export_attention(const fs::path& checkpoint, const std::vector<std::int64_t>& question_ids,
                                          const DataDir& data, const fs::path& out_dir) {
  data.check();
  auto snap = restore_checkpoint<TrainScalar>(load_checkpoint(checkpoint));
  const auto& model = snap.model;
  if (!model.attention()) throw ConfigError("checkpoint was trained without attention; nothing to export");
  std::map<std::int64_t, QuestionRecord> by_id;
  for (const auto& r : data.split("train")) by_id[r.question_id] = r;
  if (data.has_val()) {
    for (const auto& r : data.split("val")) by_id[r.question_id] = r;
  }
  const auto prep = model;
  FeatureStore<TrainScalar> features(data.features(),
                                     [prep](const FeatureMap<TrainScalar>& raw) { return prep.prepare_features(raw); });
  fs::create_directories(out_dir);
  ExportOutcome outcome;
  for (auto qid : question_ids) {
    auto it = by_id.find(qid);
    if (it == by_id.end()) {
      outcome.unknown.push_back(qid);
      continue;
    }
    const auto& record = it->second;
    const auto& fm = features.get(record.image_id);
    const auto result = model.forward(model.question_vocab().sequence(record.text), fm, false, 0);
    export_attention_maps(*result.attention, fm.height, fm.width, qid, out_dir);
    Prediction pred{qid, predict(result.dist, model.answer_vocab()), top_answers(result.dist, model.answer_vocab(), 5)};
    auto j = pred.to_json();
    j["question"] = record.text;
    detail::write_file(out_dir / (std::to_string(qid) + "_top5.json"), j.dump(2) + "\n");
    outcome.exported.push_back(qid);
  }
  return outcome;
}

inline SynthDataset run_synth(const SynthSpec& spec, const fs::path& out_dir) {
  auto data = generate_synthetic(spec);
  write_synthetic(data, out_dir);
  return data;
}

}  // namespace saaa
