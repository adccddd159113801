#pragma once

// Checkpoint files. Little-endian layout:
//   "SAAC" | u16 version
//   u32 n | n bytes   config text (key = value lines)
//   u32 n | n bytes   state JSON (step, sampler, vocabularies, feature depth)
//   u32 blob count, then per blob:
//     u32 n | name | u32 rank | rank x u32 extents | f32 values
// Blobs are written in sorted-name order: parameters under their own names,
// Adam moments under "adam/m/<name>" and "adam/v/<name>".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "saaa/adam.hpp"
#include "saaa/config.hpp"
#include "saaa/errors.hpp"
#include "saaa/feature_map.hpp"
#include "saaa/model.hpp"
#include "saaa/sampler.hpp"

namespace saaa {

inline constexpr std::array<char, 4> kCheckpointMagic = {'S', 'A', 'A', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Blob {
  Shape shape;
  std::vector<float> values;

  bool operator==(const Blob&) const = default;
};

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::string config_text;
  std::string state_text;
  std::map<std::string, Blob> blobs;

  bool operator==(const Checkpoint&) const = default;
};

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u16(out, ckpt.version);
  auto put_text = [&](const std::string& s) {
    detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
  };
  put_text(ckpt.config_text);
  put_text(ckpt.state_text);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, blob] : ckpt.blobs) {
    put_text(name);
    detail::put_u32(out, static_cast<std::uint32_t>(blob.shape.size()));
    for (auto e : blob.shape) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : blob.values) detail::put_f32(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos));
    }
  };
  auto u32 = [&](const char* what) {
    need(4, what);
    const auto v = detail::get_u32(p + pos);
    pos += 4;
    return v;
  };
  auto text = [&](const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(bytes.data() + pos, n);
    pos += n;
    return s;
  };
  if (bytes.size() < 4 || std::memcmp(p, kCheckpointMagic.data(), 4) != 0) {
    throw CheckpointError("not a checkpoint: bad magic, expected \"SAAC\"");
  }
  pos = 4;
  need(2, "version");
  Checkpoint ckpt;
  ckpt.version = static_cast<std::uint16_t>(p[4] | (p[5] << 8));
  pos = 6;
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(ckpt.version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ckpt.config_text = text("config");
  ckpt.state_text = text("state");
  const std::uint32_t count = u32("blob count");
  for (std::uint32_t b = 0; b < count; ++b) {
    std::string name = text("blob name");
    Blob blob;
    const std::uint32_t rank = u32("blob rank");
    for (std::uint32_t r = 0; r < rank; ++r) blob.shape.push_back(u32("blob extent"));
    const std::size_t n = shape_size(blob.shape);
    need(n * 4, "blob values");
    blob.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) blob.values[i] = std::bit_cast<float>(detail::get_u32(p + pos + 4 * i));
    pos += n * 4;
    if (!ckpt.blobs.emplace(std::move(name), std::move(blob)).second) throw CheckpointError("duplicate blob name");
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint at byte " + std::to_string(pos));
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const Error& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Model and optimizer state <-> checkpoint

template <typename T>
Blob to_blob(const Shape& shape, std::span<const T> values) {
  Blob b{shape, {}};
  b.values.reserve(values.size());
  for (T v : values) b.values.push_back(static_cast<float>(v));
  return b;
}

/// Everything needed to resume training or to evaluate.
template <typename T>
struct TrainingSnapshot {
  VqaModel<T> model;
  AdamState<T> adam;
  std::optional<BatchSampler> sampler;
};

template <typename T>
Checkpoint make_checkpoint(const VqaModel<T>& model, const AdamState<T>& adam, const BatchSampler* sampler) {
  Checkpoint ckpt;
  ckpt.config_text = config_to_text(model.config());
  nlohmann::json state;
  state["step"] = adam.step;
  state["feature_depth"] = model.feature_depth();
  state["question_vocab"] = model.question_vocab().id_to_token;
  state["answer_vocab"] = model.answer_vocab().answers;
  state["answer_coverage"] = model.answer_vocab().coverage;
  if (sampler) state["sampler"] = sampler->to_json();
  ckpt.state_text = state.dump();
  for (const auto& [name, p] : model.params()) ckpt.blobs.emplace(name, to_blob<T>(p.shape(), p.data()));
  for (const auto& [name, mom] : adam.moments) {
    const Shape& shape = model.params().at(name).shape();
    ckpt.blobs.emplace("adam/m/" + name, to_blob<T>(shape, std::span<const T>(mom.m)));
    ckpt.blobs.emplace("adam/v/" + name, to_blob<T>(shape, std::span<const T>(mom.v)));
  }
  return ckpt;
}

/// Rebuilds model, optimizer and sampler. Throws CheckpointError when blobs and
/// the configured architecture disagree.
template <typename T>
TrainingSnapshot<T> restore_checkpoint(const Checkpoint& ckpt) {
  TrainConfig config;
  nlohmann::json state;
  try {
    config = parse_config(ckpt.config_text);
    state = nlohmann::json::parse(ckpt.state_text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  auto answers = AnswerVocabulary::from_list(state.at("answer_vocab").get<std::vector<std::string>>());
  answers.coverage = state.value("answer_coverage", 0.0);
  auto tokens = state.at("question_vocab").get<std::vector<std::string>>();
  auto model = VqaModel<T>::create(config, tokens, std::move(answers), state.at("feature_depth").get<std::size_t>());
  if (model.question_vocab().id_to_token != tokens) throw CheckpointError("question vocabulary mismatch");

  std::size_t used = 0;
  for (auto& [name, param] : model.params()) {
    auto it = ckpt.blobs.find(name);
    if (it == ckpt.blobs.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (it->second.shape != param.shape()) {
      throw CheckpointError("parameter " + name + " has shape " + shape_string(it->second.shape) + ", model expects " +
                            shape_string(param.shape()));
    }
    Tensor<T> handle = param;
    auto dst = handle.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.values[i]);
    ++used;
  }
  TrainingSnapshot<T> snap{std::move(model), {}, std::nullopt};
  snap.adam.step = state.at("step").get<std::uint64_t>();
  for (const auto& [name, blob] : ckpt.blobs) {
    if (name.rfind("adam/m/", 0) != 0) continue;
    const std::string param = name.substr(7);
    auto v = ckpt.blobs.find("adam/v/" + param);
    if (!snap.model.params().contains(param) || v == ckpt.blobs.end()) {
      throw CheckpointError("orphan optimizer moments for " + param);
    }
    auto& mom = snap.adam.moments[param];
    mom.m.assign(blob.values.begin(), blob.values.end());
    mom.v.assign(v->second.values.begin(), v->second.values.end());
    used += 2;
  }
  if (used != ckpt.blobs.size()) throw CheckpointError("checkpoint holds blobs the model does not use");
  if (state.contains("sampler")) snap.sampler = BatchSampler::from_json(state.at("sampler"));
  return snap;
}

}  // namespace saaa
