#pragma once

// Answer vocabulary and the consensus accuracy metric.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/records.hpp"

namespace saaa {

/// Lowercase, trim, collapse runs of whitespace to one space. Nothing else.
inline std::string normalize_answer(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char raw : s) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

/// min(c, 3) summed over the ten leave-one-out subsets, where c counts the
/// matches among the other nine answers. Accuracy is this value / 30.
inline int consensus_numerator(std::size_t matches) {
  const int m = static_cast<int>(matches);
  const int others = static_cast<int>(kAnswersPerQuestion) - m;
  return m * std::min(m - 1, 3) + others * std::min(m, 3);
}

/// Acc = (1/10) sum_k min(#{j != k : pred == a_j} / 3, 1), taken as an exact
/// integer count over 30. Strings must already be normalized.
inline double vqa_accuracy(const std::string& predicted, const std::vector<std::string>& ground_truth) {
  if (ground_truth.size() != kAnswersPerQuestion) {
    throw InvalidRecord("vqa_accuracy: expected 10 ground-truth answers, got " + std::to_string(ground_truth.size()));
  }
  const auto matches = static_cast<std::size_t>(std::count(ground_truth.begin(), ground_truth.end(), predicted));
  return consensus_numerator(matches) / 30.0;
}

/// Most frequent answer, ties broken lexicographically.
inline std::string majority_answer(const std::vector<std::string>& answers) {
  std::map<std::string, int> counts;
  for (const auto& a : answers) ++counts[a];
  std::string best;
  int best_count = 0;
  for (const auto& [a, c] : counts) {
    if (c > best_count) {
      best = a;
      best_count = c;
    }
  }
  return best;
}

/// yes/no for "yes" and "no", number for all-digit answers, other otherwise.
inline AnswerType infer_answer_type(const std::string& answer) {
  if (answer == "yes" || answer == "no") return AnswerType::yes_no;
  if (!answer.empty() && std::all_of(answer.begin(), answer.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return AnswerType::number;
  }
  return AnswerType::other;
}

/// Record's answer type, or the rule applied to its majority answer.
inline AnswerType resolve_answer_type(const QuestionRecord& r) {
  if (r.answer_type) return *r.answer_type;
  if (r.answers.empty()) return AnswerType::other;
  std::vector<std::string> normalized;
  for (const auto& a : r.answers) normalized.push_back(normalize_answer(a));
  return infer_answer_type(majority_answer(normalized));
}

struct AnswerVocabulary {
  std::vector<std::string> answers;  // class index -> answer
  std::map<std::string, int> index;
  double coverage = 0.0;

  std::size_t size() const { return answers.size(); }

  std::optional<int> find(const std::string& normalized) const {
    auto it = index.find(normalized);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  /// Class ids of the in-vocabulary answers, duplicates kept.
  std::vector<int> ids_of(const std::vector<std::string>& raw_answers) const {
    std::vector<int> ids;
    for (const auto& a : raw_answers) {
      if (auto id = find(normalize_answer(a))) ids.push_back(*id);
    }
    return ids;
  }

  static AnswerVocabulary from_list(std::vector<std::string> answers) {
    AnswerVocabulary v;
    v.answers = std::move(answers);
    for (std::size_t i = 0; i < v.answers.size(); ++i) {
      if (!v.index.emplace(v.answers[i], static_cast<int>(i)).second) {
        throw InvalidArgument("duplicate answer in vocabulary: " + v.answers[i]);
      }
    }
    return v;
  }
};

/// Fraction of the (normalized) answers in `records` that the vocabulary contains.
inline double answer_coverage(const AnswerVocabulary& vocab, const std::vector<QuestionRecord>& records) {
  std::size_t total = 0, hit = 0;
  for (const auto& r : records)
    for (const auto& a : r.answers) {
      ++total;
      if (vocab.find(normalize_answer(a))) ++hit;
    }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

/// Top-M answers by training frequency (ties lexicographic). Coverage is measured
/// on `validation` when given, on the training records otherwise.
inline AnswerVocabulary build_answer_vocab(const std::vector<QuestionRecord>& train, std::size_t max_answers,
                                           const std::vector<QuestionRecord>* validation = nullptr) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : train)
    for (const auto& a : r.answers) ++counts[normalize_answer(a)];
  if (counts.empty()) throw ConfigError("build_answer_vocab: training records carry no answers");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_answers) ranked.resize(max_answers);
  std::vector<std::string> answers;
  for (auto& [a, _] : ranked) answers.push_back(a);
  auto vocab = AnswerVocabulary::from_list(std::move(answers));
  vocab.coverage = answer_coverage(vocab, validation ? *validation : train);
  return vocab;
}

}  // namespace saaa
