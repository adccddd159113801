#pragma once

// Consensus-accuracy evaluation with per-answer-type breakdown.

#include <array>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "saaa/answer_head.hpp"
#include "saaa/answers.hpp"
#include "saaa/dataset.hpp"
#include "saaa/model.hpp"

namespace saaa {

inline constexpr const char* kAnswerNormalizationNote = "lowercase, trim, collapse whitespace";

struct EvalReport {
  struct Tally {
    std::size_t count = 0;
    long long numerator = 0;  // sum of 30 * accuracy; exact, so order-independent
    double accuracy() const { return count ? static_cast<double>(numerator) / (30.0 * static_cast<double>(count)) : 0.0; }
  };

  std::array<Tally, 3> per_type;  // indexed by AnswerType
  std::size_t skipped = 0;
  std::vector<std::string> errors;

  const Tally& tally(AnswerType t) const { return per_type[static_cast<std::size_t>(t)]; }
  std::size_t example_count() const { return per_type[0].count + per_type[1].count + per_type[2].count; }
  double overall() const {
    const std::size_t n = example_count();
    long long num = per_type[0].numerator + per_type[1].numerator + per_type[2].numerator;
    return n ? static_cast<double>(num) / (30.0 * static_cast<double>(n)) : 0.0;
  }

  void add(AnswerType type, const std::string& predicted, const std::vector<std::string>& ground_truth) {
    std::size_t matches = 0;
    for (const auto& a : ground_truth) matches += a == predicted;
    auto& t = per_type[static_cast<std::size_t>(type)];
    ++t.count;
    t.numerator += consensus_numerator(matches);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["overall"] = overall();
    j["yes/no"] = tally(AnswerType::yes_no).accuracy();
    j["number"] = tally(AnswerType::number).accuracy();
    j["other"] = tally(AnswerType::other).accuracy();
    j["counts"] = {{"yes/no", tally(AnswerType::yes_no).count},
                   {"number", tally(AnswerType::number).count},
                   {"other", tally(AnswerType::other).count}};
    j["example_count"] = example_count();
    j["skipped_count"] = skipped;
    j["errors"] = errors;
    j["answer_normalization"] = kAnswerNormalizationNote;
    return j;
  }

  /// "Y/N | Num | Other | All" with percentages to two decimals.
  std::string table() const {
    char buf[160];
    std::string out = "   Y/N |    Num |  Other |    All\n";
    std::snprintf(buf, sizeof(buf), "%6.2f | %6.2f | %6.2f | %6.2f\n", 100 * tally(AnswerType::yes_no).accuracy(),
                  100 * tally(AnswerType::number).accuracy(), 100 * tally(AnswerType::other).accuracy(),
                  100 * overall());
    out += buf;
    std::snprintf(buf, sizeof(buf), "(%zu examples, %zu skipped; answers matched after: %s)\n", example_count(), skipped,
                  kAnswerNormalizationNote);
    return out + buf;
  }
};

struct Prediction {
  std::int64_t question_id = 0;
  std::string answer;
  std::vector<RankedAnswer> top5;

  nlohmann::json to_json() const {
    nlohmann::json top = nlohmann::json::array();
    for (const auto& r : top5) top.push_back({{"answer", r.answer}, {"prob", r.prob}});
    return {{"question_id", question_id}, {"answer", answer}, {"top5", top}};
  }
};

/// Scores fixed predictions (keyed by question id) against records. Records
/// without answers or without a prediction are counted as skipped.
inline EvalReport score_predictions(const std::vector<QuestionRecord>& records,
                                    const std::map<std::int64_t, std::string>& predictions) {
  EvalReport report;
  for (const auto& r : records) {
    auto it = predictions.find(r.question_id);
    if (r.answers.empty() || it == predictions.end()) {
      ++report.skipped;
      continue;
    }
    std::vector<std::string> gt;
    for (const auto& a : r.answers) gt.push_back(normalize_answer(a));
    report.add(resolve_answer_type(r), normalize_answer(it->second), gt);
  }
  return report;
}

/// Dropout-free forward pass and scoring of every record.
template <typename T>
EvalReport evaluate(const VqaModel<T>& model, const std::vector<QuestionRecord>& records, FeatureStore<T>& features,
                    std::vector<Prediction>* predictions = nullptr) {
  if (records.empty()) throw InvalidArgument("evaluate: no records");
  std::size_t empty_questions = 0;
  const auto examples = make_examples(records, model, &empty_questions);
  EvalReport report;
  report.skipped = empty_questions;
  for (const auto& ex : examples) {
    const FeatureMap<T>* fm = nullptr;
    try {
      fm = &features.get(ex.image_id);
    } catch (const Error& e) {
      report.errors.push_back("question " + std::to_string(ex.question_id) + ": " + e.what());
      ++report.skipped;
      continue;
    }
    const auto result = model.forward(ex.tokens, *fm, false, 0);
    const std::string answer = predict(result.dist, model.answer_vocab());
    if (predictions) predictions->push_back({ex.question_id, answer, top_answers(result.dist, model.answer_vocab(), 5)});
    if (ex.ground_truth.size() != kAnswersPerQuestion) {
      ++report.skipped;
      continue;
    }
    report.add(ex.type, answer, ex.ground_truth);
  }
  return report;
}

/// Consensus accuracy over prepared examples (used at training milestones).
template <typename T>
double example_accuracy(const VqaModel<T>& model, const std::vector<Example>& examples, FeatureStore<T>& features) {
  EvalReport report;
  for (const auto& ex : examples) {
    if (ex.ground_truth.size() != kAnswersPerQuestion) continue;
    const auto result = model.forward(ex.tokens, features.get(ex.image_id), false, 0);
    report.add(ex.type, predict(result.dist, model.answer_vocab()), ex.ground_truth);
  }
  return report.overall();
}

}  // namespace saaa
