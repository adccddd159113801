#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "saaa/errors.hpp"
#include "saaa/rng.hpp"

namespace saaa {

/// Epoch-wise shuffled batches. A batch that runs past the end of an epoch
/// continues into the next shuffle, so every batch has exactly `batch_size`
/// entries. Also hands out the per-example seeds, so one generator fixes the
/// whole training stream.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::size_t count, std::uint64_t seed) : count_(count), rng_(seed) {
    if (count == 0) throw InvalidArgument("BatchSampler: empty dataset");
    reshuffle();
  }

  std::vector<std::size_t> next_batch(std::size_t batch_size) {
    std::vector<std::size_t> out;
    out.reserve(batch_size);
    while (out.size() < batch_size) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

  std::uint64_t next_seed() { return rng_.next_u64(); }

  std::uint64_t epoch() const { return epoch_; }

  nlohmann::json to_json() const {
    return {{"rng", rng_.state()}, {"order", order_}, {"cursor", cursor_}, {"epoch", epoch_}, {"count", count_}};
  }

  static BatchSampler from_json(const nlohmann::json& j) {
    BatchSampler s;
    s.count_ = j.at("count").get<std::size_t>();
    s.rng_.set_state(j.at("rng").get<std::string>());
    s.order_ = j.at("order").get<std::vector<std::size_t>>();
    s.cursor_ = j.at("cursor").get<std::size_t>();
    s.epoch_ = j.at("epoch").get<std::uint64_t>();
    if (s.order_.size() != s.count_ || s.cursor_ > s.count_) throw InvalidArgument("inconsistent sampler state");
    return s;
  }

 private:
  void reshuffle() {
    order_.resize(count_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = count_; i > 1; --i) {
      const std::size_t j = rng_.below(i);
      std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
    ++epoch_;
  }

  std::size_t count_ = 0;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

}  // namespace saaa
