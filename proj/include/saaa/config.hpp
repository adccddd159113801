#pragma once

// Training configuration and its "key = value" text form.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "saaa/errors.hpp"

namespace saaa {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t total_steps = 100000;
  double l0 = 0.001;
  std::size_t decay_steps = 50000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> milestone_steps = {1000, 3000, 6000, 12000, 25000, 50000, 100000, 200000};
  std::size_t milestone_scale = 1;  // milestones are divided by this for toy runs
  double clip_norm = 0.0;           // global-norm clipping, 0 disables

  // Architecture and ablation switches.
  bool l2_norm = true;
  bool dropout_fc_conv = true;
  bool dropout_lstm = true;
  bool attention_enabled = true;
  bool sampled_loss = false;
  bool positional_features = false;
  bool bidirectional = false;
  std::size_t embedding_D = 300;
  std::size_t lstm_state = 1024;
  std::size_t lstm_layers = 1;
  std::size_t attention_hidden = 512;
  std::size_t glimpse_count = 2;
  std::vector<std::size_t> classifier_sizes = {1024, 3000};  // hidden widths, then M
  std::size_t M = 3000;

  std::vector<std::size_t> classifier_hidden() const {
    return {classifier_sizes.begin(), classifier_sizes.end() - 1};
  }

  /// Milestones after scaling, zero and duplicate entries removed.
  std::vector<std::size_t> effective_milestones() const {
    std::vector<std::size_t> out;
    for (auto m : milestone_steps) {
      const std::size_t scaled = m / milestone_scale;
      if (scaled > 0 && (out.empty() || out.back() != scaled)) out.push_back(scaled);
    }
    return out;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(batch_size, "batch_size");
    positive(decay_steps, "decay_steps");
    positive(milestone_scale, "milestone_scale");
    positive(embedding_D, "embedding_D");
    positive(lstm_state, "lstm_state");
    positive(lstm_layers, "lstm_layers");
    positive(attention_hidden, "attention_hidden");
    positive(glimpse_count, "glimpse_count");
    positive(M, "M");
    if (!(l0 > 0)) throw ConfigError("l0 must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must be in [0, 1)");
    if (!(adam_epsilon > 0)) throw ConfigError("adam_epsilon must be positive");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("dropout_rate must be in [0, 1)");
    if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be non-negative");
    if (classifier_sizes.empty()) throw ConfigError("classifier_sizes must end with M");
    for (auto w : classifier_sizes) positive(w, "classifier_sizes entry");
    if (classifier_sizes.back() != M) {
      throw ConfigError("classifier_sizes must end with M (" + std::to_string(M) + "), got " +
                        std::to_string(classifier_sizes.back()));
    }
  }

  bool operator==(const TrainConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& text) {
  U value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for " + key + ": \"" + text + "\"");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad boolean for " + key + ": \"" + text + "\"");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::string normalized = text;
  for (auto& c : normalized) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(normalized);
  std::vector<std::size_t> out;
  std::string item;
  while (is >> item) out.push_back(parse_number<std::size_t>(key, item));
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(v[i]);
  }
  return out;
}

struct ConfigField {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline const std::map<std::string, ConfigField>& config_fields() {
  using C = TrainConfig;
  static const std::map<std::string, ConfigField> fields = [] {
    std::map<std::string, ConfigField> f;
    auto size_field = [&](const char* name, std::size_t C::*member) {
      f[name] = {[member](C& c, const std::string& k, const std::string& v) { c.*member = parse_number<std::size_t>(k, v); },
                 [member](const C& c) { return std::to_string(c.*member); }};
    };
    auto real_field = [&](const char* name, double C::*member) {
      f[name] = {[member](C& c, const std::string& k, const std::string& v) { c.*member = parse_number<double>(k, v); },
                 [member](const C& c) { return format_double(c.*member); }};
    };
    auto bool_field = [&](const char* name, bool C::*member) {
      f[name] = {[member](C& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); },
                 [member](const C& c) { return std::string(c.*member ? "true" : "false"); }};
    };
    auto list_field = [&](const char* name, std::vector<std::size_t> C::*member) {
      f[name] = {[member](C& c, const std::string& k, const std::string& v) { c.*member = parse_list(k, v); },
                 [member](const C& c) { return format_list(c.*member); }};
    };
    size_field("batch_size", &C::batch_size);
    size_field("total_steps", &C::total_steps);
    real_field("l0", &C::l0);
    size_field("decay_steps", &C::decay_steps);
    real_field("beta1", &C::beta1);
    real_field("beta2", &C::beta2);
    real_field("adam_epsilon", &C::adam_epsilon);
    real_field("dropout_rate", &C::dropout_rate);
    f["seed"] = {[](C& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
                 [](const C& c) { return std::to_string(c.seed); }};
    list_field("milestone_steps", &C::milestone_steps);
    size_field("milestone_scale", &C::milestone_scale);
    real_field("clip_norm", &C::clip_norm);
    bool_field("l2_norm", &C::l2_norm);
    bool_field("dropout_fc_conv", &C::dropout_fc_conv);
    bool_field("dropout_lstm", &C::dropout_lstm);
    bool_field("attention_enabled", &C::attention_enabled);
    bool_field("sampled_loss", &C::sampled_loss);
    bool_field("positional_features", &C::positional_features);
    bool_field("bidirectional", &C::bidirectional);
    size_field("embedding_D", &C::embedding_D);
    size_field("lstm_state", &C::lstm_state);
    size_field("lstm_layers", &C::lstm_layers);
    size_field("attention_hidden", &C::attention_hidden);
    size_field("glimpse_count", &C::glimpse_count);
    list_field("classifier_sizes", &C::classifier_sizes);
    size_field("M", &C::M);
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Applies one `key = value` assignment. Unknown keys are rejected.
inline void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  const auto& fields = detail::config_fields();
  auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("unknown config key: " + key);
  it->second.set(config, key, value);
}

/// Applies the assignments in `text` on top of `base`. '#' starts a comment.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    try {
      set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// Every field, one per line, in sorted key order. parse_config inverts it exactly.
inline std::string config_to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace saaa
