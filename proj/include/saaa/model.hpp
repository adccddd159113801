#pragma once

// The full question-answering network: question encoder, stacked attention
// (or spatial pooling when ablated) and the answer classifier.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "saaa/answer_head.hpp"
#include "saaa/answers.hpp"
#include "saaa/attention.hpp"
#include "saaa/config.hpp"
#include "saaa/feature_map.hpp"
#include "saaa/question.hpp"
#include "saaa/records.hpp"
#include "saaa/tensor.hpp"

namespace saaa {

/// A record prepared for the network.
struct Example {
  std::int64_t question_id = 0;
  std::int64_t image_id = 0;
  TokenSequence tokens;
  std::vector<int> answer_ids;            // in-vocabulary answers, duplicates kept
  std::vector<std::string> ground_truth;  // normalized, 10 entries or empty
  AnswerType type = AnswerType::other;
};

template <typename T>
struct ForwardResult {
  EncoderOutput<T> encoder;
  std::optional<AttentionResult<T>> attention;  // absent when attention is disabled
  Tensor<T> image_summary;                      // glimpses or the spatial mean
  AnswerDistribution<T> dist;
};

template <typename T>
class VqaModel {
 public:
  /// Fresh model. `feature_depth` is the depth stored in the feature files.
  static VqaModel create(const TrainConfig& config, const std::vector<std::string>& question_tokens,
                         AnswerVocabulary answers, std::size_t feature_depth) {
    config.validate();
    if (answers.size() == 0) throw ConfigError("empty answer vocabulary");
    VqaModel m;
    m.config_ = config;
    m.answers_ = std::move(answers);
    m.feature_depth_ = feature_depth;
    const std::uint64_t seed = config.seed;
    m.question_vocab_ = make_question_vocab<T>(question_tokens, config.embedding_D, derive_seed(seed, hash_name("embedding")));
    m.params_.add("embedding", m.question_vocab_.embedding);
    m.lstm_ = make_lstm_params<T>(config.embedding_D, config.lstm_state, config.lstm_layers, config.bidirectional,
                                  derive_seed(seed, hash_name("lstm")));
    register_lstm(m.params_, m.lstm_);
    const std::size_t state = m.lstm_.output_size();
    const std::size_t depth = m.input_depth();
    std::size_t image_size = depth;
    if (config.attention_enabled) {
      m.attention_ = make_attention_params<T>(depth, state, config.attention_hidden, config.glimpse_count,
                                              derive_seed(seed, hash_name("attention")));
      register_attention(m.params_, *m.attention_);
      image_size = depth * config.glimpse_count;
    }
    m.classifier_ = make_classifier_params<T>(image_size + state, config.classifier_hidden(), m.answers_.size(),
                                              derive_seed(seed, hash_name("classifier")));
    register_classifier(m.params_, m.classifier_);
    return m;
  }

  const TrainConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const QuestionVocab<T>& question_vocab() const { return question_vocab_; }
  const AnswerVocabulary& answer_vocab() const { return answers_; }
  const LstmParams<T>& lstm() const { return lstm_; }
  const std::optional<AttentionParams<T>>& attention() const { return attention_; }
  const ClassifierParams<T>& classifier() const { return classifier_; }

  /// Replaces the answer strings; the class count must stay the same.
  void set_answer_vocab(AnswerVocabulary answers) {
    if (answers.size() != answers_.size()) {
      throw ConfigError("answer vocabulary has " + std::to_string(answers.size()) + " entries, checkpoint classifier has " +
                        std::to_string(answers_.size()));
    }
    answers_ = std::move(answers);
  }

  std::size_t feature_depth() const { return feature_depth_; }
  /// Depth seen by the network (file depth, plus two positional channels when enabled).
  std::size_t input_depth() const { return feature_depth_ + (config_.positional_features ? 2 : 0); }

  /// Normalization and positional augmentation as configured.
  FeatureMap<T> prepare_features(const FeatureMap<T>& raw) const {
    if (raw.depth != feature_depth_) {
      throw InvalidShape("feature map " + std::to_string(raw.image_id) + " has depth " + std::to_string(raw.depth) +
                         ", model expects " + std::to_string(feature_depth_));
    }
    FeatureMap<T> fm = config_.l2_norm ? normalize_depth(raw) : raw;
    if (config_.positional_features) fm = augment_positions(fm);
    return fm;
  }

  ForwardResult<T> forward(const TokenSequence& tokens, const FeatureMap<T>& prepared, bool training,
                           std::uint64_t seed) const {
    const double lstm_rate = config_.dropout_lstm ? config_.dropout_rate : 0.0;
    const double fc_rate = config_.dropout_fc_conv ? config_.dropout_rate : 0.0;
    ForwardResult<T> out;
    out.encoder = encode_question(tokens, question_vocab_, lstm_, {training, lstm_rate, derive_seed(seed, 1)});
    const auto& s = out.encoder.s;
    if (attention_) {
      out.attention = forward_attention(s, prepared, *attention_, {training, fc_rate, derive_seed(seed, 2)});
      out.image_summary = out.attention->x;
    } else {
      out.image_summary = spatial_mean(prepared);
    }
    out.dist = classify(out.image_summary, s, classifier_, {training, fc_rate, derive_seed(seed, 3)});
    return out;
  }

  /// Training loss for one example; nullopt when it has no in-vocabulary answer.
  std::optional<Tensor<T>> example_loss(const Example& ex, const FeatureMap<T>& prepared, bool training,
                                        std::uint64_t seed) const {
    if (ex.answer_ids.empty()) return std::nullopt;
    const auto result = forward(ex.tokens, prepared, training, seed);
    if (config_.sampled_loss) return sampled_nll(result.dist, ex.answer_ids, derive_seed(seed, 4));
    return averaged_nll(result.dist, ex.answer_ids);
  }

 private:
  TrainConfig config_;
  AnswerVocabulary answers_;
  std::size_t feature_depth_ = 0;
  QuestionVocab<T> question_vocab_;
  LstmParams<T> lstm_;
  std::optional<AttentionParams<T>> attention_;
  ClassifierParams<T> classifier_;
  ParamStore<T> params_;
};

/// Tokenizes and maps records. Records with an empty question are dropped and
/// counted in `empty_questions`.
template <typename T>
std::vector<Example> make_examples(const std::vector<QuestionRecord>& records, const VqaModel<T>& model,
                                   std::size_t* empty_questions = nullptr) {
  std::vector<Example> out;
  for (const auto& r : records) {
    Example ex;
    ex.question_id = r.question_id;
    ex.image_id = r.image_id;
    try {
      ex.tokens = model.question_vocab().sequence(r.text);
    } catch (const EmptyQuestion&) {
      if (empty_questions) ++*empty_questions;
      continue;
    }
    ex.answer_ids = model.answer_vocab().ids_of(r.answers);
    for (const auto& a : r.answers) ex.ground_truth.push_back(normalize_answer(a));
    ex.type = resolve_answer_type(r);
    out.push_back(std::move(ex));
  }
  return out;
}

/// Tokens of every question in `records`, for building the question vocabulary.
inline std::vector<std::string> corpus_tokens(const std::vector<QuestionRecord>& records) {
  std::vector<std::string> tokens;
  for (const auto& r : records) {
    try {
      for (auto& t : tokenize(r.text)) tokens.push_back(std::move(t));
    } catch (const EmptyQuestion&) {
    }
  }
  return tokens;
}

}  // namespace saaa
