#pragma once

// Question tokenization, word embeddings and the LSTM question encoder.

#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/records.hpp"
#include "saaa/rng.hpp"
#include "saaa/tensor.hpp"

namespace saaa {

inline constexpr std::size_t kMaxQuestionLength = 15;
inline constexpr int kUnkId = 0;
inline constexpr const char* kUnkToken = "<unk>";

/// Lowercases, drops every character outside [a-z0-9'] (whitespace separates
/// tokens), and splits. Throws EmptyQuestion if nothing is left.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      continue;
    }
    const char c = static_cast<char>(std::tolower(ch));
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'') current.push_back(c);
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  if (tokens.empty()) throw EmptyQuestion("question has no tokens: \"" + text + "\"");
  return tokens;
}

struct TokenSequence {
  std::vector<int> ids;  // 1 <= size <= 15 after truncation
};

/// Keeps the first kMaxQuestionLength ids.
inline TokenSequence truncate(TokenSequence seq) {
  if (seq.ids.size() > kMaxQuestionLength) seq.ids.resize(kMaxQuestionLength);
  return seq;
}

template <typename T>
struct QuestionVocab {
  std::map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;  // id_to_token[0] == kUnkToken
  Tensor<T> embedding;                   // (size, D)

  std::size_t size() const { return id_to_token.size(); }
  std::size_t embedding_dim() const { return embedding.dim(1); }

  int id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnkId : it->second;
  }

  /// Tokens to ids (unknown tokens become UNK), truncated to 15.
  TokenSequence sequence(const std::vector<std::string>& tokens) const {
    TokenSequence seq;
    for (const auto& t : tokens) seq.ids.push_back(id_of(t));
    return truncate(std::move(seq));
  }

  TokenSequence sequence(const std::string& text) const { return sequence(tokenize(text)); }
};

/// Vocabulary from a token list (UNK first, the rest sorted) and a freshly
/// initialized embedding table.
template <typename T>
QuestionVocab<T> make_question_vocab(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  QuestionVocab<T> vocab;
  vocab.id_to_token.push_back(kUnkToken);
  std::set<std::string> sorted(tokens.begin(), tokens.end());
  sorted.erase(kUnkToken);
  for (const auto& t : sorted) {
    vocab.token_to_id.emplace(t, static_cast<int>(vocab.id_to_token.size()));
    vocab.id_to_token.push_back(t);
  }
  vocab.embedding = glorot_init<T>({vocab.size(), dim}, vocab.size(), dim, seed);
  return vocab;
}

/// Vocabulary over every token of the corpus plus UNK.
template <typename T>
QuestionVocab<T> build_question_vocab(const std::vector<QuestionRecord>& corpus, std::size_t dim, std::uint64_t seed) {
  if (corpus.empty()) throw InvalidArgument("build_question_vocab: empty corpus");
  std::vector<std::string> tokens;
  for (const auto& r : corpus) {
    try {
      for (auto& t : tokenize(r.text)) tokens.push_back(std::move(t));
    } catch (const EmptyQuestion&) {
    }
  }
  return make_question_vocab<T>(tokens, dim, seed);
}

/// tanh-squashed word embeddings, one row per token.
template <typename T>
Tensor<T> encode_tokens(const TokenSequence& seq, const QuestionVocab<T>& vocab) {
  if (seq.ids.empty()) throw EmptyQuestion("encode_tokens: empty sequence");
  std::vector<int> ids = seq.ids;
  for (auto& id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) id = kUnkId;
  }
  return tanh(gather_rows(vocab.embedding, ids));
}

// ---------------------------------------------------------------------------
// LSTM

/// One LSTM layer in one direction. W maps [x ; h] (input + state) to the four
/// gate pre-activations laid out as [input | forget | candidate | output].
template <typename T>
struct LstmLayer {
  Tensor<T> W;  // (input + state, 4 * state)
  Tensor<T> b;  // (4 * state)

  std::size_t state_size() const { return b.dim(0) / 4; }
  std::size_t input_size() const { return W.dim(0) - state_size(); }
};

template <typename T>
struct LstmParams {
  std::size_t state_size = 0;
  std::size_t layer_count = 1;
  bool bidirectional = false;
  std::vector<LstmLayer<T>> forward;   // one per layer
  std::vector<LstmLayer<T>> backward;  // empty unless bidirectional

  std::size_t output_size() const { return bidirectional ? 2 * state_size : state_size; }
};

/// Glorot weights, forget-gate bias 1, remaining biases 0.
template <typename T>
LstmLayer<T> make_lstm_layer(std::size_t input, std::size_t state, std::uint64_t seed) {
  LstmLayer<T> layer;
  layer.W = glorot_init<T>({input + state, 4 * state}, input + state, 4 * state, seed);
  std::vector<T> bias(4 * state, T(0));
  for (std::size_t j = state; j < 2 * state; ++j) bias[j] = T(1);
  layer.b = Tensor<T>({4 * state}, std::move(bias));
  return layer;
}

template <typename T>
LstmParams<T> make_lstm_params(std::size_t input, std::size_t state, std::size_t layers, bool bidirectional,
                               std::uint64_t seed) {
  if (state == 0 || layers == 0) throw InvalidArgument("LSTM state size and layer count must be positive");
  LstmParams<T> p;
  p.state_size = state;
  p.layer_count = layers;
  p.bidirectional = bidirectional;
  std::size_t in = input;
  for (std::size_t l = 0; l < layers; ++l) {
    p.forward.push_back(make_lstm_layer<T>(in, state, derive_seed(seed, 2 * l)));
    if (bidirectional) p.backward.push_back(make_lstm_layer<T>(in, state, derive_seed(seed, 2 * l + 1)));
    in = bidirectional ? 2 * state : state;
  }
  return p;
}

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

/// c' = f*c + i*g, h' = o*tanh(c') with sigmoid gates i, f, o and tanh candidate g.
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c, const LstmLayer<T>& layer) {
  const std::size_t s = layer.state_size();
  if (x.rank() != 1 || h.rank() != 1 || c.rank() != 1 || x.dim(0) != layer.input_size() || h.dim(0) != s ||
      c.dim(0) != s) {
    throw InvalidShape("lstm_step: x" + shape_string(x.shape()) + " h" + shape_string(h.shape()) + " c" +
                       shape_string(c.shape()) + " do not match layer (input " +
                       std::to_string(layer.input_size()) + ", state " + std::to_string(s) + ")");
  }
  const auto gates = linear(concat<T>({x, h}, 0), layer.W, layer.b);
  const auto i = sigmoid(slice(gates, 0, 0, s));
  const auto f = sigmoid(slice(gates, 0, s, 2 * s));
  const auto g = tanh(slice(gates, 0, 2 * s, 3 * s));
  const auto o = sigmoid(slice(gates, 0, 3 * s, 4 * s));
  auto c_next = add(mul(f, c), mul(i, g));
  auto h_next = mul(o, tanh(c_next));
  return {std::move(h_next), std::move(c_next)};
}

template <typename T>
struct EncoderOutput {
  Tensor<T> s;                  // final hidden state of the top layer (both directions concatenated)
  std::vector<Tensor<T>> steps; // top-layer forward hidden state after each token
  std::size_t cell_steps = 0;   // lstm_step invocations, P * layers * directions
};

struct DropoutSpec {
  bool training = false;
  double rate = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

/// Runs one layer over the rows of `inputs` in the given direction. Returns the
/// hidden states in input order.
template <typename T>
std::vector<Tensor<T>> run_lstm_layer(const std::vector<Tensor<T>>& inputs, const LstmLayer<T>& layer, bool reverse,
                                      std::size_t& counter) {
  const std::size_t s = layer.state_size();
  Tensor<T> h = Tensor<T>::zeros({s});
  Tensor<T> c = Tensor<T>::zeros({s});
  std::vector<Tensor<T>> out(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const std::size_t idx = reverse ? inputs.size() - 1 - t : t;
    auto next = lstm_step(inputs[idx], h, c, layer);
    ++counter;
    h = next.h;
    c = next.c;
    out[idx] = h;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> rows_of(const Tensor<T>& m) {
  std::vector<Tensor<T>> rows;
  for (std::size_t r = 0; r < m.dim(0); ++r) rows.push_back(reshape(slice(m, 0, r, r + 1), {m.dim(1)}));
  return rows;
}

}  // namespace detail

/// Unrolls the LSTM over exactly the question's tokens (after truncation to 15)
/// from a zero state. Dropout is applied to each layer's input sequence.
template <typename T>
EncoderOutput<T> encode_question(const TokenSequence& seq, const QuestionVocab<T>& vocab, const LstmParams<T>& params,
                                 const DropoutSpec& drop) {
  if (seq.ids.empty()) throw EmptyQuestion("encode_question: empty sequence");
  const TokenSequence capped = truncate(seq);
  EncoderOutput<T> out;
  Tensor<T> layer_input = encode_tokens(capped, vocab);
  std::vector<Tensor<T>> fw_states, bw_states;
  for (std::size_t l = 0; l < params.layer_count; ++l) {
    const auto fw_in = dropout(layer_input, drop.rate, drop.training, derive_seed(drop.seed, 2 * l));
    fw_states = detail::run_lstm_layer(detail::rows_of(fw_in), params.forward[l], false, out.cell_steps);
    if (params.bidirectional) {
      const auto bw_in = dropout(layer_input, drop.rate, drop.training, derive_seed(drop.seed, 2 * l + 1));
      bw_states = detail::run_lstm_layer(detail::rows_of(bw_in), params.backward[l], true, out.cell_steps);
    }
    if (l + 1 < params.layer_count) {
      std::vector<Tensor<T>> rows;
      for (std::size_t t = 0; t < fw_states.size(); ++t) {
        const auto row = params.bidirectional ? concat<T>({fw_states[t], bw_states[t]}, 0) : fw_states[t];
        rows.push_back(reshape(row, {1, row.size()}));
      }
      layer_input = concat(rows, 0);
    }
  }
  out.steps = fw_states;
  out.s = params.bidirectional ? concat<T>({fw_states.back(), bw_states.front()}, 0) : fw_states.back();
  return out;
}

template <typename T>
void register_lstm(ParamStore<T>& store, const LstmParams<T>& p) {
  for (std::size_t l = 0; l < p.forward.size(); ++l) {
    store.add("lstm/fw/l" + std::to_string(l) + "/W", p.forward[l].W);
    store.add("lstm/fw/l" + std::to_string(l) + "/b", p.forward[l].b);
  }
  for (std::size_t l = 0; l < p.backward.size(); ++l) {
    store.add("lstm/bw/l" + std::to_string(l) + "/W", p.backward[l].W);
    store.add("lstm/bw/l" + std::to_string(l) + "/b", p.backward[l].b);
  }
}

}  // namespace saaa
