#pragma once

// Answer classifier G over [x ; s] and the training losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "saaa/answers.hpp"
#include "saaa/errors.hpp"
#include "saaa/question.hpp"
#include "saaa/tensor.hpp"

namespace saaa {

template <typename T>
struct DenseLayer {
  Tensor<T> W;
  Tensor<T> b;
};

/// Fully connected stack: ReLU after every layer but the last, which emits M logits.
template <typename T>
struct ClassifierParams {
  std::vector<DenseLayer<T>> layers;

  std::size_t input_size() const { return layers.front().W.dim(0); }
  std::size_t answer_count() const { return layers.back().b.dim(0); }
};

/// `hidden` lists the ReLU layer widths; an empty list gives a single linear layer.
template <typename T>
ClassifierParams<T> make_classifier_params(std::size_t input, const std::vector<std::size_t>& hidden,
                                           std::size_t answers, std::uint64_t seed) {
  if (answers == 0) throw InvalidArgument("classifier needs at least one answer class");
  ClassifierParams<T> p;
  std::size_t in = input;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(answers);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (widths[l] == 0) throw InvalidArgument("classifier layer width must be positive");
    p.layers.push_back({glorot_init<T>({in, widths[l]}, in, widths[l], derive_seed(seed, l)),
                        Tensor<T>::zeros({widths[l]})});
    in = widths[l];
  }
  return p;
}

template <typename T>
void register_classifier(ParamStore<T>& store, const ClassifierParams<T>& p) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    store.add("classifier/fc" + std::to_string(l) + "/W", p.layers[l].W);
    store.add("classifier/fc" + std::to_string(l) + "/b", p.layers[l].b);
  }
}

template <typename T>
struct AnswerDistribution {
  Tensor<T> logits;
  Tensor<T> probs;
  Tensor<T> log_probs;

  std::size_t size() const { return probs.size(); }
};

template <typename T>
AnswerDistribution<T> distribution_from_logits(const Tensor<T>& logits) {
  return {logits, softmax(logits, 0), log_softmax(logits, 0)};
}

template <typename T>
AnswerDistribution<T> classify(const Tensor<T>& x, const Tensor<T>& s, const ClassifierParams<T>& params,
                               const DropoutSpec& drop) {
  if (x.rank() != 1 || s.rank() != 1 || x.dim(0) + s.dim(0) != params.input_size()) {
    throw InvalidShape("classify: glimpses " + shape_string(x.shape()) + " + state " + shape_string(s.shape()) +
                       " do not match classifier input " + std::to_string(params.input_size()));
  }
  Tensor<T> h = concat<T>({x, s}, 0);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    h = dropout(h, drop.rate, drop.training, derive_seed(drop.seed, l));
    h = linear(h, params.layers[l].W, params.layers[l].b);
    if (l + 1 < params.layers.size()) h = relu(h);
  }
  return distribution_from_logits(h);
}

namespace detail {
template <typename T>
void check_answer_ids(const AnswerDistribution<T>& dist, const std::vector<int>& ids) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= dist.size()) {
      throw InvalidArgument("answer id " + std::to_string(id) + " outside [0, " + std::to_string(dist.size()) + ")");
    }
  }
}
}  // namespace detail

/// Mean of -log P(a_k) over the given answers (duplicates count). nullopt means
/// "skip this example": none of its answers are in the vocabulary.
template <typename T>
std::optional<Tensor<T>> averaged_nll(const AnswerDistribution<T>& dist, const std::vector<int>& answer_ids) {
  if (answer_ids.empty()) return std::nullopt;
  detail::check_answer_ids(dist, answer_ids);
  return scale(sum(take(dist.log_probs, answer_ids)), T(-1) / static_cast<T>(answer_ids.size()));
}

/// -log P(a_j) for one answer drawn uniformly from `answer_ids`.
template <typename T>
std::optional<Tensor<T>> sampled_nll(const AnswerDistribution<T>& dist, const std::vector<int>& answer_ids,
                                     std::uint64_t seed) {
  if (answer_ids.empty()) return std::nullopt;
  detail::check_answer_ids(dist, answer_ids);
  Rng rng(seed);
  const int pick = answer_ids[rng.below(answer_ids.size())];
  return scale(sum(take(dist.log_probs, {pick})), T(-1));
}

/// Class index of the highest probability; ties go to the lowest index.
template <typename T>
std::size_t argmax_class(const AnswerDistribution<T>& dist) {
  const auto p = dist.probs.data();
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

template <typename T>
std::string predict(const AnswerDistribution<T>& dist, const AnswerVocabulary& vocab) {
  const std::size_t k = argmax_class(dist);
  if (k >= vocab.size()) throw InvalidArgument("predict: distribution larger than answer vocabulary");
  return vocab.answers[k];
}

struct RankedAnswer {
  std::string answer;
  double prob = 0;
};

/// The k most probable answers in non-increasing probability (ties by index).
template <typename T>
std::vector<RankedAnswer> top_answers(const AnswerDistribution<T>& dist, const AnswerVocabulary& vocab, std::size_t k) {
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  const auto p = dist.probs.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  std::vector<RankedAnswer> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    out.push_back({vocab.answers.at(order[i]), static_cast<double>(p[order[i]])});
  }
  return out;
}

}  // namespace saaa
