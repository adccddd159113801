#pragma once

// The ablation matrix: every mutation of the default model as a named config
// variant, and the steps-by-variant accuracy table they produce.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saaa/config.hpp"
#include "saaa/errors.hpp"

namespace saaa {

struct AblationVariant {
  std::string name;   // identifier used in suite files and output paths
  std::string label;  // human-readable row label
  std::function<void(TrainConfig&, std::size_t size_scale)> mutate;
};

/// Paper-scale width divided by the suite's size scale, at least 1.
inline std::size_t scaled_width(std::size_t width, std::size_t size_scale) {
  return std::max<std::size_t>(1, width / std::max<std::size_t>(1, size_scale));
}

/// Default recipe with every width divided by `size_scale`.
inline TrainConfig scaled_default(std::size_t size_scale, std::size_t answers) {
  TrainConfig c;
  c.embedding_D = scaled_width(300, size_scale);
  c.lstm_state = scaled_width(1024, size_scale);
  c.attention_hidden = scaled_width(512, size_scale);
  c.M = answers;
  c.classifier_sizes = {scaled_width(1024, size_scale), answers};
  return c;
}

inline const std::vector<AblationVariant>& ablation_catalogue() {
  using C = TrainConfig;
  static const std::vector<AblationVariant> rows = [] {
    std::vector<AblationVariant> v;
    auto none = [](C&, std::size_t) {};
    v.push_back({"default", "Default", none});
    v.push_back({"no_l2_norm", "No l2 normalization", [](C& c, std::size_t) { c.l2_norm = false; }});
    v.push_back({"no_dropout_fc_conv", "No dropout on FC/Conv layers", [](C& c, std::size_t) { c.dropout_fc_conv = false; }});
    v.push_back({"no_dropout_lstm", "No dropout on LSTM layers", [](C& c, std::size_t) { c.dropout_lstm = false; }});
    v.push_back({"no_attention", "No attention", [](C& c, std::size_t) { c.attention_enabled = false; }});
    v.push_back({"sampled_loss", "Sampling loss", [](C& c, std::size_t) { c.sampled_loss = true; }});
    v.push_back({"positional_features", "With positional features", [](C& c, std::size_t) { c.positional_features = true; }});
    v.push_back({"bidirectional_lstm", "Bidirectional LSTM", [](C& c, std::size_t) { c.bidirectional = true; }});
    for (std::size_t d : {100, 300, 500}) {
      v.push_back({"embedding_" + std::to_string(d),
                   "Word embedding size: " + std::to_string(d) + (d == 300 ? " (default)" : ""),
                   [d](C& c, std::size_t s) { c.embedding_D = scaled_width(d, s); }});
    }
    for (std::size_t h : {512, 1024, 2048}) {
      v.push_back({"lstm_" + std::to_string(h), "LSTM state size: " + std::to_string(h) + (h == 1024 ? " (default)" : ""),
                   [h](C& c, std::size_t s) {
                     c.lstm_state = scaled_width(h, s);
                     c.lstm_layers = 1;
                   }});
    }
    v.push_back({"lstm_1024_1024", "LSTM state size: 1024 1024", [](C& c, std::size_t s) {
                   c.lstm_state = scaled_width(1024, s);
                   c.lstm_layers = 2;
                 }});
    for (auto [hidden, glimpses] : std::vector<std::pair<std::size_t, std::size_t>>{{512, 1}, {512, 2}, {512, 3}, {1024, 1}, {1024, 2}}) {
      const bool is_default = hidden == 512 && glimpses == 2;
      v.push_back({"attention_" + std::to_string(hidden) + "_" + std::to_string(glimpses),
                   "Attention size: " + std::to_string(hidden) + " " + std::to_string(glimpses) +
                       (is_default ? " (default)" : ""),
                   [hidden, glimpses](C& c, std::size_t s) {
                     c.attention_hidden = scaled_width(hidden, s);
                     c.glimpse_count = glimpses;
                   }});
    }
    const std::vector<std::vector<std::size_t>> classifiers = {{}, {1024}, {2048}, {1024, 1024}};
    for (const auto& hidden : classifiers) {
      std::string name = "classifier", label = "Classifier size:";
      for (auto w : hidden) {
        name += "_" + std::to_string(w);
        label += " " + std::to_string(w);
      }
      name += "_M";
      label += " 3000";
      if (hidden == std::vector<std::size_t>{1024}) label += " (default)";
      v.push_back({name, label, [hidden](C& c, std::size_t s) {
                     c.classifier_sizes.clear();
                     for (auto w : hidden) c.classifier_sizes.push_back(scaled_width(w, s));
                     c.classifier_sizes.push_back(c.M);
                   }});
    }
    return v;
  }();
  return rows;
}

inline const AblationVariant& find_variant(const std::string& name) {
  for (const auto& v : ablation_catalogue()) {
    if (v.name == name) return v;
  }
  throw ConfigError("unknown ablation variant: " + name);
}

struct AblationSuite {
  TrainConfig base;
  std::size_t size_scale = 1;
  std::vector<std::string> variants;  // names from the catalogue, unique

  TrainConfig variant_config(const std::string& name) const {
    TrainConfig c = base;
    find_variant(name).mutate(c, size_scale);
    c.validate();
    return c;
  }
};

/// Suite file: `key = value` config overrides, `size_scale = N`, and one
/// `variant <name>` line per row (`variant all` selects the whole catalogue).
inline AblationSuite parse_suite(const std::string& text) {
  AblationSuite suite;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  auto add_variant = [&](const std::string& name) {
    find_variant(name);
    if (!seen.insert(name).second) throw ConfigError("duplicate variant " + name);
    suite.variants.push_back(name);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      if (line.rfind("variant ", 0) == 0) {
        const std::string name = detail::trim(line.substr(8));
        if (name == "all") {
          for (const auto& v : ablation_catalogue()) add_variant(v.name);
        } else {
          add_variant(name);
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value or variant <name>");
      const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
      if (key == "size_scale") {
        suite.size_scale = detail::parse_number<std::size_t>(key, value);
        if (suite.size_scale == 0) throw ConfigError("size_scale must be positive");
      } else {
        overrides.emplace_back(key, value);
      }
    } catch (const ConfigError& e) {
      throw ConfigError("suite line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::size_t answers = 3000;
  for (const auto& [k, v] : overrides) {
    if (k == "M") answers = detail::parse_number<std::size_t>(k, v);
  }
  suite.base = scaled_default(suite.size_scale, answers);
  for (const auto& [k, v] : overrides) set_config_value(suite.base, k, v);
  suite.base.validate();
  if (suite.variants.empty()) throw ConfigError("suite lists no variants");
  return suite;
}

inline AblationSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open suite file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_suite(ss.str());
}

/// Rows are variants, columns are milestone steps, cells are accuracies.
struct MilestoneTable {
  std::vector<std::size_t> columns;
  std::vector<std::string> rows;
  std::map<std::string, std::map<std::size_t, double>> cells;
  std::map<std::string, std::string> failures;

  void set(const std::string& row, std::size_t step, double accuracy) { cells[row][step] = accuracy; }

  std::optional<double> get(const std::string& row, std::size_t step) const {
    auto r = cells.find(row);
    if (r == cells.end()) return std::nullopt;
    auto c = r->second.find(step);
    if (c == r->second.end()) return std::nullopt;
    return c->second;
  }

  bool complete() const {
    for (const auto& row : rows)
      for (auto step : columns)
        if (!get(row, step)) return false;
    return true;
  }

  /// Accuracies as percentages with two decimals; blank when missing.
  std::string to_csv() const {
    std::string out = "variant";
    for (auto c : columns) out += "," + std::to_string(c);
    out += "\n";
    for (const auto& row : rows) {
      out += row;
      for (auto c : columns) {
        out += ",";
        if (auto v = get(row, c)) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
          out += buf;
        }
      }
      out += "\n";
    }
    return out;
  }
};

}  // namespace saaa
