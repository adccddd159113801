#pragma once

// Training loop: shuffled fixed-size batches, mean per-example loss, Adam with
// exponentially decaying learning rate, evaluation at milestone steps.

#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saaa/adam.hpp"
#include "saaa/checkpoint.hpp"
#include "saaa/config.hpp"
#include "saaa/dataset.hpp"
#include "saaa/evaluator.hpp"
#include "saaa/model.hpp"
#include "saaa/sampler.hpp"

namespace saaa {

struct MetricsRow {
  std::uint64_t step = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> eval_accuracy;
};

inline std::string metrics_header() { return "step,lr,train_loss,eval_accuracy\n"; }

inline std::string metrics_line(const MetricsRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,", static_cast<unsigned long long>(row.step), row.lr, row.train_loss);
  std::string out = buf;
  if (row.eval_accuracy) {
    std::snprintf(buf, sizeof(buf), "%.6f", *row.eval_accuracy);
    out += buf;
  }
  return out + "\n";
}

/// Fresh model whose vocabularies come from the training records.
template <typename T>
VqaModel<T> build_model(const TrainConfig& config, const std::vector<QuestionRecord>& train,
                        const std::vector<QuestionRecord>* validation, std::size_t feature_depth) {
  auto answers = build_answer_vocab(train, config.M, validation);
  return VqaModel<T>::create(config, corpus_tokens(train), std::move(answers), feature_depth);
}

template <typename T>
class Trainer {
 public:
  /// `features` must outlive the trainer and prepare maps with model.prepare_features.
  Trainer(VqaModel<T> model, const std::vector<QuestionRecord>& train, const std::vector<QuestionRecord>& eval,
          FeatureStore<T>& features, std::optional<BatchSampler> sampler = std::nullopt, AdamState<T> adam = {})
      : model_(std::move(model)), features_(features), adam_(std::move(adam)) {
    for (auto& ex : make_examples(train, model_)) {
      if (ex.answer_ids.empty()) {
        ++skipped_;
        continue;
      }
      train_.push_back(std::move(ex));
    }
    if (train_.empty()) {
      throw ConfigError("no training example has an answer inside the answer vocabulary");
    }
    eval_ = make_examples(eval, model_);
    sampler_ = sampler ? std::move(*sampler) : BatchSampler(train_.size(), derive_seed(model_.config().seed, 7));
    const auto ms = model_.config().effective_milestones();
    milestones_.insert(ms.begin(), ms.end());
  }

  static Trainer resume(TrainingSnapshot<T> snap, const std::vector<QuestionRecord>& train,
                        const std::vector<QuestionRecord>& eval, FeatureStore<T>& features) {
    return Trainer(std::move(snap.model), train, eval, features, std::move(snap.sampler), std::move(snap.adam));
  }

  const VqaModel<T>& model() const { return model_; }
  VqaModel<T>& model() { return model_; }
  const AdamState<T>& adam() const { return adam_; }
  std::uint64_t step_count() const { return adam_.step; }
  std::size_t skipped_examples() const { return skipped_; }
  const std::vector<Example>& train_examples() const { return train_; }
  bool is_milestone(std::uint64_t step) const { return milestones_.contains(step); }

  /// Mean loss over the given examples with the given dropout seeds (graph attached).
  Tensor<T> batch_loss(const std::vector<std::size_t>& indices, const std::vector<std::uint64_t>& seeds,
                       bool training) {
    std::vector<Tensor<T>> losses;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& ex = train_.at(indices[i]);
      losses.push_back(*model_.example_loss(ex, features_.get(ex.image_id), training, seeds[i]));
    }
    return scale(add_n(losses), T(1) / static_cast<T>(losses.size()));
  }

  MetricsRow step() {
    const auto& cfg = model_.config();
    const auto indices = sampler_.next_batch(cfg.batch_size);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < indices.size(); ++i) seeds.push_back(sampler_.next_seed());
    const auto loss = batch_loss(indices, seeds, true);
    const double loss_value = static_cast<double>(loss.item());
    const double lr = learning_rate(adam_.step, cfg.l0, cfg.decay_steps);
    if (!std::isfinite(loss_value)) {
      std::ostringstream dump;
      dump << "non-finite loss " << loss_value << " at step " << adam_.step + 1 << " (lr " << lr << "), batch questions:";
      for (auto i : indices) dump << ' ' << train_[i].question_id;
      throw TrainingError(dump.str());
    }
    auto grads = backward(loss, model_.params());
    if (cfg.clip_norm > 0) clip_by_global_norm(grads, cfg.clip_norm);
    adam_step(model_.params(), grads, adam_, lr, {cfg.beta1, cfg.beta2, cfg.adam_epsilon});
    MetricsRow row{adam_.step, lr, loss_value, std::nullopt};
    if (is_milestone(adam_.step)) row.eval_accuracy = example_accuracy(model_, eval_, features_);
    return row;
  }

  /// Steps until `total_steps`, reporting every row; `on_milestone` runs after milestone steps.
  void run(std::uint64_t total_steps, const std::function<void(const MetricsRow&)>& on_row = {},
           const std::function<void(const MetricsRow&)>& on_milestone = {}) {
    while (adam_.step < total_steps) {
      const auto row = step();
      if (on_row) on_row(row);
      if (row.eval_accuracy && on_milestone) on_milestone(row);
    }
  }

  Checkpoint checkpoint() const { return make_checkpoint(model_, adam_, &sampler_); }

  double train_accuracy() { return example_accuracy(model_, train_, features_); }
  double eval_accuracy() { return example_accuracy(model_, eval_, features_); }

 private:
  VqaModel<T> model_;
  FeatureStore<T>& features_;
  AdamState<T> adam_;
  BatchSampler sampler_;
  std::vector<Example> train_;
  std::vector<Example> eval_;
  std::set<std::uint64_t> milestones_;
  std::size_t skipped_ = 0;
};

}  // namespace saaa
