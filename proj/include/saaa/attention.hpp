#pragma once

// Stacked soft attention: C distributions over the L spatial locations of a
// feature map, each producing a glimpse (the weighted average of locations).
//
// The two 1x1 convolutions are the same linear maps applied independently at
// every location, so they are realized as row-batched `linear` calls on the
// (L, depth + state) matrix [phi_l ; s].

#include <cstdint>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/feature_map.hpp"
#include "saaa/question.hpp"
#include "saaa/tensor.hpp"

namespace saaa {

template <typename T>
struct AttentionParams {
  Tensor<T> W1;  // (depth + state, hidden), shared by all glimpses
  Tensor<T> b1;  // (hidden)
  Tensor<T> W2;  // (hidden, C), one column per glimpse
  Tensor<T> b2;  // (C)

  std::size_t input_size() const { return W1.dim(0); }
  std::size_t hidden_size() const { return W1.dim(1); }
  std::size_t glimpse_count() const { return W2.dim(1); }

  static std::size_t parameter_count(std::size_t depth, std::size_t state, std::size_t hidden, std::size_t glimpses) {
    return (depth + state) * hidden + hidden + hidden * glimpses + glimpses;
  }
};

template <typename T>
AttentionParams<T> make_attention_params(std::size_t depth, std::size_t state, std::size_t hidden,
                                         std::size_t glimpses, std::uint64_t seed) {
  if (glimpses == 0) throw InvalidArgument("attention needs at least one glimpse");
  if (hidden == 0) throw InvalidArgument("attention hidden size must be positive");
  AttentionParams<T> p;
  p.W1 = glorot_init<T>({depth + state, hidden}, depth + state, hidden, derive_seed(seed, 1));
  p.b1 = Tensor<T>::zeros({hidden});
  p.W2 = glorot_init<T>({hidden, glimpses}, hidden, glimpses, derive_seed(seed, 2));
  p.b2 = Tensor<T>::zeros({glimpses});
  return p;
}

template <typename T>
void register_attention(ParamStore<T>& store, const AttentionParams<T>& p) {
  store.add("attention/conv1/W", p.W1);
  store.add("attention/conv1/b", p.b1);
  store.add("attention/conv2/W", p.W2);
  store.add("attention/conv2/b", p.b2);
}

template <typename T>
struct AttentionResult {
  Tensor<T> weights;              // (L, C); each column sums to 1
  std::vector<Tensor<T>> glimpses;  // C vectors of length depth
  Tensor<T> x;                    // (C * depth), glimpses in order
};

/// Per-location logits second(relu(first([phi_l ; s]))), shape (L, C).
template <typename T>
Tensor<T> attention_logits(const Tensor<T>& s, const FeatureMap<T>& fm, const AttentionParams<T>& params,
                           const DropoutSpec& drop) {
  if (s.rank() != 1 || fm.depth + s.dim(0) != params.input_size()) {
    throw InvalidShape("attention_logits: depth " + std::to_string(fm.depth) + " + state " +
                       (s.rank() == 1 ? std::to_string(s.dim(0)) : shape_string(s.shape())) +
                       " does not match first layer input " + std::to_string(params.input_size()));
  }
  const auto locations = fm.as_locations();
  auto input = concat<T>({locations, tile_rows(s, fm.locations())}, 1);
  input = dropout(input, drop.rate, drop.training, derive_seed(drop.seed, 0));
  auto hidden = relu(linear(input, params.W1, params.b1));
  hidden = dropout(hidden, drop.rate, drop.training, derive_seed(drop.seed, 1));
  return linear(hidden, params.W2, params.b2);
}

/// Softmax over the spatial axis, separately for each glimpse column.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw InvalidShape("attention_weights: expected (L, C) logits");
  return softmax(logits, 0);
}

/// Glimpse c is sum_l alpha[l, c] * phi_l, summed independently of location order.
template <typename T>
AttentionResult<T> compute_glimpses(const Tensor<T>& alpha, const FeatureMap<T>& fm) {
  if (alpha.rank() != 2 || alpha.dim(0) != fm.locations()) {
    throw InvalidShape("compute_glimpses: weights " + shape_string(alpha.shape()) + " vs " +
                       std::to_string(fm.locations()) + " locations");
  }
  const std::size_t glimpses = alpha.dim(1);
  const auto stacked = sorted_matmul(transpose(alpha), fm.as_locations());  // (C, depth)
  AttentionResult<T> out;
  out.weights = alpha;
  for (std::size_t c = 0; c < glimpses; ++c) {
    out.glimpses.push_back(reshape(slice(stacked, 0, c, c + 1), {fm.depth}));
  }
  out.x = reshape(stacked, {glimpses * fm.depth});
  return out;
}

template <typename T>
AttentionResult<T> forward_attention(const Tensor<T>& s, const FeatureMap<T>& fm, const AttentionParams<T>& params,
                                     const DropoutSpec& drop) {
  return compute_glimpses(attention_weights(attention_logits(s, fm, params, drop)), fm);
}

}  // namespace saaa
