#pragma once

// Planted-attention synthetic data.
//
// Each image has `keys` marked locations. A location's feature is
// [key code | value prototype]. Key codes and prototypes are distinct random
// sign vectors, spread over many channels so that input dropout cannot erase
// them. The prototype encodes one of M answer classes; unmarked locations
// carry a zero key part and a random prototype. Each question names one key word; the answer is the class stored
// at that key's location.
//
// Records come in pairs that share the question and the multiset of location
// features but differ in which value sits under the asked key. Both images in
// a pair have the same spatial mean and the same question with different
// answers, so a model that pools features spatially cannot tell them apart,
// while the answer stays a deterministic function of (features, question).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/feature_map.hpp"
#include "saaa/records.hpp"
#include "saaa/rng.hpp"

namespace saaa {

struct SynthSpec {
  std::size_t examples = 32;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t depth = 8;
  std::size_t question_vocab = 20;
  std::size_t answers = 6;
  std::size_t val_examples = 0;
  std::uint64_t seed = 0;

  std::size_t key_count() const { return std::clamp<std::size_t>(depth / 4, 2, 8); }
  std::size_t key_dims() const { return depth / 2; }  // leading channels carry the key code
  std::size_t value_dims() const { return depth - key_dims(); }
};

struct SynthDataset {
  std::vector<QuestionRecord> train;
  std::vector<QuestionRecord> val;
  std::vector<FeatureMap<float>> features;  // one per record, image ids are unique
  std::vector<std::string> answer_names;
};

inline std::vector<std::string> synth_answer_names(std::size_t count) {
  static const std::vector<std::string> base = {"yes", "no", "2", "3", "cat", "dog", "red", "tree",
                                                "car", "4", "bird", "ball", "5", "table", "blue", "1"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(i < base.size() ? base[i] : "answer" + std::to_string(i));
  return out;
}

inline std::vector<std::string> synth_key_words(std::size_t count) {
  static const std::vector<std::string> base = {"red", "green", "blue", "yellow", "purple", "orange", "white", "black",
                                                "pink", "brown", "gray", "gold"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(i < base.size() ? base[i] : "key" + std::to_string(i));
  return out;
}

inline std::vector<std::string> synth_filler_words(std::size_t count) {
  static const std::vector<std::string> base = {"what", "is", "the", "at", "cell", "thing", "in", "which",
                                                "object", "shown", "there", "this", "of", "marked", "spot", "here"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(i < base.size() ? base[i] : "word" + std::to_string(i));
  return out;
}

namespace detail {

struct PlantedImage {
  std::vector<std::size_t> key_location;  // location of each key
  std::vector<std::size_t> value_class;   // class at each location
};

using Codes = std::vector<std::vector<float>>;

// `count` distinct random sign vectors of length `dims`.
inline Codes sign_codes(std::size_t count, std::size_t dims, Rng& rng) {
  Codes codes;
  while (codes.size() < count) {
    std::vector<float> c(dims);
    for (auto& v : c) v = rng.below(2) ? 1.0f : -1.0f;
    if (dims >= 2 && std::find(codes.begin(), codes.end(), c) != codes.end()) continue;
    codes.push_back(std::move(c));
  }
  return codes;
}

inline FeatureMap<float> render_planted(const SynthSpec& spec, const PlantedImage& img, const Codes& key_codes,
                                        const Codes& prototypes, std::int64_t image_id) {
  const std::size_t key_dims = spec.key_dims(), dims = spec.value_dims();
  std::vector<float> values(spec.height * spec.width * spec.depth, 0.0f);
  for (std::size_t l = 0; l < spec.height * spec.width; ++l) {
    float* cell = values.data() + l * spec.depth;
    for (std::size_t d = 0; d < dims; ++d) cell[key_dims + d] = prototypes[img.value_class[l]][d];
  }
  for (std::size_t k = 0; k < img.key_location.size(); ++k) {
    float* cell = values.data() + img.key_location[k] * spec.depth;
    for (std::size_t d = 0; d < key_dims; ++d) cell[d] = key_codes[k][d];
  }
  FeatureMap<float> fm;
  fm.image_id = image_id;
  fm.height = spec.height;
  fm.width = spec.width;
  fm.depth = spec.depth;
  fm.values = Tensor<float>({spec.height, spec.width, spec.depth}, std::move(values));
  return fm;
}

}  // namespace detail

inline void validate_synth_spec(const SynthSpec& s) {
  if (s.examples == 0 || s.height == 0 || s.width == 0 || s.answers < 2) {
    throw ConfigError("synth: examples, grid and answers (>= 2) must be positive");
  }
  if (s.depth < 4) throw ConfigError("synth: depth must be at least 4");
  if (s.key_dims() < 2 && s.key_count() > 2) throw ConfigError("synth: depth too small for the key codes");
  if (s.value_dims() < 16 && (std::size_t{1} << s.value_dims()) < s.answers) {
    throw ConfigError("synth: depth too small to give every answer a distinct prototype");
  }
  if (s.key_count() > s.height * s.width) throw ConfigError("synth: more keys than grid locations");
  if (s.question_vocab < s.key_count() + 2) {
    throw ConfigError("synth: question vocabulary must hold " + std::to_string(s.key_count()) + " key words + 2 fillers");
  }
}

inline SynthDataset generate_synthetic(const SynthSpec& spec) {
  validate_synth_spec(spec);
  Rng rng(derive_seed(spec.seed, hash_name("synth")));
  const std::size_t keys = spec.key_count(), L = spec.height * spec.width;
  const auto key_codes = detail::sign_codes(keys, spec.key_dims(), rng);
  const auto prototypes = detail::sign_codes(spec.answers, spec.value_dims(), rng);

  SynthDataset data;
  data.answer_names = synth_answer_names(spec.answers);
  const auto key_words = synth_key_words(keys);
  const auto fillers = synth_filler_words(spec.question_vocab - keys);

  auto make_question = [&](std::size_t key) {
    const std::size_t length = 2 + rng.below(std::min<std::size_t>(5, fillers.size()));
    std::vector<std::string> words;
    for (std::size_t i = 0; i < length; ++i) words.push_back(fillers[rng.below(fillers.size())]);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), key_words[key]);
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
      std::string w = words[i];
      if (i == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
      text += (i ? " " : "") + w;
    }
    return text + "?";
  };

  auto make_record = [&](std::int64_t id, const std::string& question, std::size_t answer_class) {
    QuestionRecord r;
    r.question_id = id;
    r.image_id = id;
    r.text = question;
    r.answers.assign(kAnswersPerQuestion, data.answer_names[answer_class]);
    return r;
  };

  const std::size_t total = spec.examples + spec.val_examples;
  std::int64_t next_id = 1;
  std::vector<QuestionRecord> all;
  while (all.size() < total) {
    detail::PlantedImage a;
    std::vector<std::size_t> locations(L);
    for (std::size_t l = 0; l < L; ++l) locations[l] = l;
    for (std::size_t i = L; i > 1; --i) std::swap(locations[i - 1], locations[rng.below(i)]);
    a.key_location.assign(locations.begin(), locations.begin() + static_cast<std::ptrdiff_t>(keys));
    a.value_class.resize(L);
    for (auto& c : a.value_class) c = rng.below(spec.answers);
    const std::size_t asked = rng.below(keys);
    // Partner image: swap the asked key's value with another key holding a different class.
    std::size_t partner_key = keys;
    for (std::size_t k = 0; k < keys; ++k) {
      const std::size_t probe = (asked + 1 + k) % keys;
      if (probe != asked && a.value_class[a.key_location[probe]] != a.value_class[a.key_location[asked]]) {
        partner_key = probe;
        break;
      }
    }
    if (partner_key == keys) {
      a.value_class[a.key_location[(asked + 1) % keys]] =
          (a.value_class[a.key_location[asked]] + 1 + rng.below(spec.answers - 1)) % spec.answers;
      partner_key = (asked + 1) % keys;
    }
    detail::PlantedImage b = a;
    std::swap(b.value_class[b.key_location[asked]], b.value_class[b.key_location[partner_key]]);

    const std::string question = make_question(asked);
    for (const auto* img : {&a, &b}) {
      if (all.size() == total) break;
      const std::int64_t id = next_id++;
      data.features.push_back(detail::render_planted(spec, *img, key_codes, prototypes, id));
      all.push_back(make_record(id, question, img->value_class[img->key_location[asked]]));
    }
  }
  data.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.examples));
  data.val.assign(all.begin() + static_cast<std::ptrdiff_t>(spec.examples), all.end());
  return data;
}

/// Writes train.jsonl, val.jsonl (when non-empty) and features/<id>.saaf.
inline void write_synthetic(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  save_records(data.train, dir / "train.jsonl");
  if (!data.val.empty()) save_records(data.val, dir / "val.jsonl");
  for (const auto& fm : data.features) save_feature_map(fm, feature_path(dir / "features", fm.image_id));
}

}  // namespace saaa
