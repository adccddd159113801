#pragma once

// Question/answer records, stored as JSON lines:
//   {"question_id": 1, "image_id": 7, "question": "...", "answers": [10 strings], "answer_type": "other"}
// `answers` and `answer_type` are optional.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "saaa/errors.hpp"

namespace saaa {

inline constexpr std::size_t kAnswersPerQuestion = 10;

enum class AnswerType { yes_no, number, other };

inline const char* answer_type_name(AnswerType t) {
  switch (t) {
    case AnswerType::yes_no: return "yes/no";
    case AnswerType::number: return "number";
    case AnswerType::other: return "other";
  }
  return "other";
}

inline std::optional<AnswerType> parse_answer_type(const std::string& s) {
  if (s == "yes/no" || s == "yes_no" || s == "yesno") return AnswerType::yes_no;
  if (s == "number") return AnswerType::number;
  if (s == "other") return AnswerType::other;
  return std::nullopt;
}

struct QuestionRecord {
  std::int64_t question_id = 0;
  std::int64_t image_id = 0;
  std::string text;
  std::vector<std::string> answers;  // empty or exactly 10
  std::optional<AnswerType> answer_type;
};

inline void validate_record(const QuestionRecord& r) {
  if (r.text.empty()) throw InvalidRecord("question " + std::to_string(r.question_id) + ": empty text");
  if (!r.answers.empty() && r.answers.size() != kAnswersPerQuestion) {
    throw InvalidRecord("question " + std::to_string(r.question_id) + ": expected 10 answers, got " +
                        std::to_string(r.answers.size()));
  }
}

inline QuestionRecord record_from_json(const nlohmann::json& j) {
  QuestionRecord r;
  try {
    r.question_id = j.at("question_id").get<std::int64_t>();
    r.image_id = j.at("image_id").get<std::int64_t>();
    r.text = j.at("question").get<std::string>();
    if (j.contains("answers")) r.answers = j.at("answers").get<std::vector<std::string>>();
    if (j.contains("answer_type")) {
      const auto type = j.at("answer_type").get<std::string>();
      r.answer_type = parse_answer_type(type);
      if (!r.answer_type) throw InvalidRecord("unknown answer_type \"" + type + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidRecord(std::string("malformed record: ") + e.what());
  }
  validate_record(r);
  return r;
}

inline nlohmann::json record_to_json(const QuestionRecord& r) {
  nlohmann::json j;
  j["question_id"] = r.question_id;
  j["image_id"] = r.image_id;
  j["question"] = r.text;
  if (!r.answers.empty()) j["answers"] = r.answers;
  if (r.answer_type) j["answer_type"] = answer_type_name(*r.answer_type);
  return j;
}

inline std::vector<QuestionRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open records file " + path.string());
  std::vector<QuestionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidRecord(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidRecord& e) {
      throw InvalidRecord(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void save_records(const std::vector<QuestionRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

}  // namespace saaa
