#pragma once

// On-disk dataset layout:
//   <data_dir>/train.jsonl         training records
//   <data_dir>/val.jsonl           optional validation records
//   <data_dir>/features/<id>.saaf  one feature map per image

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/feature_map.hpp"
#include "saaa/records.hpp"

namespace saaa {

struct DataDir {
  std::filesystem::path root;

  std::filesystem::path train_records() const { return root / "train.jsonl"; }
  std::filesystem::path val_records() const { return root / "val.jsonl"; }
  std::filesystem::path features() const { return root / "features"; }
  bool has_val() const { return std::filesystem::exists(val_records()); }

  /// Throws ConfigError naming the first missing path.
  void check() const {
    if (!std::filesystem::is_directory(root)) throw ConfigError("data directory not found: " + root.string());
    if (!std::filesystem::exists(train_records())) {
      throw ConfigError("training records not found: " + train_records().string());
    }
    if (!std::filesystem::is_directory(features())) {
      throw ConfigError("feature directory not found: " + features().string());
    }
  }

  /// Records of "train" or "val"; "val" falls back to train when absent.
  std::vector<QuestionRecord> split(const std::string& name) const {
    if (name == "train") return load_records(train_records());
    if (name == "val") return load_records(has_val() ? val_records() : train_records());
    throw ConfigError("unknown split: " + name);
  }
};

/// Lazily loads and preprocesses feature maps, caching them by image id.
template <typename T>
class FeatureStore {
 public:
  using Prepare = std::function<FeatureMap<T>(const FeatureMap<T>&)>;

  FeatureStore(std::filesystem::path dir, Prepare prepare) : dir_(std::move(dir)), prepare_(std::move(prepare)) {}

  const FeatureMap<T>& get(std::int64_t image_id) {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(image_id);
    if (it != cache_.end()) return *it->second;
    const auto path = feature_path(dir_, image_id);
    if (!std::filesystem::exists(path)) throw Error("missing feature file " + path.string());
    auto raw = load_feature_map<T>(path);
    raw.image_id = image_id;
    auto prepared = std::make_unique<FeatureMap<T>>(prepare_ ? prepare_(raw) : raw);
    return *cache_.emplace(image_id, std::move(prepared)).first->second;
  }

 private:
  std::filesystem::path dir_;
  Prepare prepare_;
  std::map<std::int64_t, std::unique_ptr<FeatureMap<T>>> cache_;
  std::mutex mutex_;
};

}  // namespace saaa
