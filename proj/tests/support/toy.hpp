#pragma once

// Small configurations and datasets shared by the trainer, harness and acceptance tests.

#include <filesystem>
#include <string>
#include <vector>

#include "saaa/harness.hpp"
#include "support/gradcheck.hpp"

namespace saaa_test {

namespace fs = std::filesystem;

inline fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("saaa_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// D=8, state=16, C=2, M=6, one hidden classifier layer.
inline saaa::TrainConfig toy_config(std::uint64_t seed = 0) {
  saaa::TrainConfig c;
  c.embedding_D = 8;
  c.lstm_state = 16;
  c.attention_hidden = 8;
  c.glimpse_count = 2;
  c.M = 6;
  c.classifier_sizes = {12, 6};
  c.batch_size = 8;
  c.total_steps = 20;
  c.milestone_scale = 1000;  // milestones 1, 3, 6, 12, 25, ...
  c.seed = seed;
  return c;
}

/// Planted task: 32 examples on a 4x4x8 grid, six answers.
inline saaa::SynthSpec toy_synth(std::uint64_t seed = 0, std::size_t n = 32, std::size_t n_val = 0) {
  saaa::SynthSpec s;
  s.examples = n;
  s.val_examples = n_val;
  s.height = 4;
  s.width = 4;
  s.depth = 8;
  s.question_vocab = 20;
  s.answers = 6;
  s.seed = seed;
  return s;
}

inline saaa::DataDir write_toy_data(const std::string& name, const saaa::SynthSpec& spec = toy_synth()) {
  const auto dir = temp_dir(name);
  saaa::write_synthetic(saaa::generate_synthetic(spec), dir);
  return {dir};
}

inline std::vector<saaa::QuestionRecord> toy_records() {
  const char* answers[] = {"yes", "no", "2", "red", "cat", "dog"};
  const char* questions[] = {"is it red", "how many dogs", "what color is the cat", "is the dog on the left"};
  std::vector<saaa::QuestionRecord> out;
  for (std::size_t i = 0; i < 4; ++i) {
    saaa::QuestionRecord r;
    r.question_id = static_cast<std::int64_t>(i + 1);
    r.image_id = static_cast<std::int64_t>(i + 1);
    r.text = questions[i];
    for (std::size_t k = 0; k < 10; ++k) r.answers.push_back(answers[(i + k * k) % 6]);
    out.push_back(r);
  }
  return out;
}

inline saaa::FeatureMap<double> toy_map(std::int64_t id, std::uint64_t seed) {
  saaa::FeatureMap<double> fm;
  fm.image_id = id;
  fm.height = 2;
  fm.width = 2;
  fm.depth = 4;
  fm.values = random_tensor({2, 2, 4}, seed);
  return fm;
}

/// Finite-difference check of the whole network (embedding through the
/// averaged loss) on the toy configuration, in double precision.
inline GradCheck full_pipeline_gradcheck(const saaa::TrainConfig& config, bool training = false) {
  const auto records = toy_records();
  auto model = saaa::build_model<double>(config, records, nullptr, 4);
  const auto examples = saaa::make_examples(records, model);
  std::vector<saaa::FeatureMap<double>> maps;
  for (std::size_t i = 0; i < examples.size(); ++i) maps.push_back(model.prepare_features(toy_map(examples[i].image_id, 50 + i)));
  return check_gradients(model.params(), [&] {
    std::vector<saaa::Tensor<double>> losses;
    for (std::size_t i = 0; i < examples.size(); ++i) losses.push_back(*model.example_loss(examples[i], maps[i], training, 9 + i));
    return saaa::scale(saaa::add_n(losses), 1.0 / static_cast<double>(losses.size()));
  });
}

}  // namespace saaa_test
