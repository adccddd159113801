// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance            all criteria
//   acceptance 3 5        only the listed ones

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "saaa/harness.hpp"
#include "support/gradcheck.hpp"
#include "support/toy.hpp"

using namespace saaa;
using namespace saaa_test;

namespace {

using Td = Tensor<double>;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

FeatureMap<double> map_of(std::size_t h, std::size_t w, std::size_t d, std::vector<double> v) {
  FeatureMap<double> fm;
  fm.height = h;
  fm.width = w;
  fm.depth = d;
  fm.values = Td({h, w, d}, std::move(v));
  return fm;
}

// 1 ---------------------------------------------------------------------------

Verdict gradient_fidelity() {
  const auto t0 = Clock::now();
  using V = std::vector<Td>;
  using Op = std::function<Td(const V&)>;
  const auto a = random_tensor({3, 4}, 1, -2, 2), b = random_tensor({3, 4}, 2), W = random_tensor({4, 5}, 3);
  const auto bias = random_tensor({5}, 4), v = random_tensor({3}, 5), sq = random_tensor({3, 3}, 6);
  const std::vector<std::pair<std::string, std::pair<V, Op>>> ops = {
      {"add", {{a, b}, [](const V& t) { return add(t[0], t[1]); }}},
      {"mul", {{a, b}, [](const V& t) { return mul(t[0], t[1]); }}},
      {"scale", {{a}, [](const V& t) { return scale(t[0], -1.5); }}},
      {"add_n", {{a, b, a}, [](const V& t) { return add_n(t); }}},
      {"tanh", {{a}, [](const V& t) { return saaa::tanh(t[0]); }}},
      {"sigmoid", {{a}, [](const V& t) { return sigmoid(t[0]); }}},
      {"relu", {{a}, [](const V& t) { return relu(t[0]); }}},
      {"dropout", {{a}, [](const V& t) { return dropout(t[0], 0.5, true, 7); }}},
      {"matmul", {{a, W}, [](const V& t) { return matmul(t[0], t[1]); }}},
      {"sorted_matmul", {{a, W}, [](const V& t) { return sorted_matmul(t[0], t[1]); }}},
      {"linear", {{a, W, bias}, [](const V& t) { return linear(t[0], t[1], t[2]); }}},
      {"transpose", {{a}, [](const V& t) { return transpose(t[0]); }}},
      {"reshape", {{a}, [](const V& t) { return reshape(t[0], {6, 2}); }}},
      {"sum", {{a}, [](const V& t) { return sum(t[0]); }}},
      {"mean", {{a}, [](const V& t) { return mean(t[0]); }}},
      {"mean_rows", {{a}, [](const V& t) { return mean_rows(t[0]); }}},
      {"softmax", {{a}, [](const V& t) { return softmax(t[0], 0); }}},
      {"log_softmax", {{a}, [](const V& t) { return log_softmax(t[0], 1); }}},
      {"l2_normalize", {{a}, [](const V& t) { return l2_normalize(t[0], 1); }}},
      {"concat", {{a, b}, [](const V& t) { return concat(t, 1); }}},
      {"slice", {{a}, [](const V& t) { return slice(t[0], 1, 1, 3); }}},
      {"tile_rows", {{v}, [](const V& t) { return tile_rows(t[0], 4); }}},
      {"gather_rows", {{sq}, [](const V& t) { return gather_rows(t[0], {2, 0, 2}); }}},
      {"take", {{v}, [](const V& t) { return take(t[0], {2, 0, 0}); }}},
  };
  double worst = 0;
  std::string worst_op;
  for (const auto& [name, op] : ops) {
    const auto r = check_op(op.first, op.second);
    if (r.max_error > worst) {
      worst = r.max_error;
      worst_op = name;
    }
  }
  const auto full = full_pipeline_gradcheck(toy_config(), false);
  const auto full_drop = full_pipeline_gradcheck(toy_config(), true);
  const double pipeline = std::max(full.max_error, full_drop.max_error);
  const double elapsed = seconds_since(t0);
  return {worst < 1e-4 && pipeline < 1e-4 && elapsed < 60,
          fmt("%zu ops worst %.2e (%s); pipeline %zu params worst %.2e; %.1f s", ops.size(), worst, worst_op.c_str(),
              full.checked, pipeline, elapsed)};
}

// 2 ---------------------------------------------------------------------------

double enumerate_accuracy(const std::string& pred, const std::vector<std::string>& gt) {
  double total = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    int agree = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) agree += (j != k && gt[j] == pred);
    total += std::min(agree / 3.0, 1.0);
  }
  return total / 10.0;
}

Verdict metric_oracle() {
  double worst = 0;
  for (std::size_t m = 0; m <= 10; ++m) {
    std::vector<std::string> gt(m, "p");
    while (gt.size() < 10) gt.push_back("q" + std::to_string(gt.size()));
    worst = std::max(worst, std::abs(vqa_accuracy("p", gt) - enumerate_accuracy("p", gt)));
  }
  Rng rng(2);
  const char* pool[] = {"a", "b", "c", "d", "e"};
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::string> gt;
    const std::size_t distinct = 1 + rng.below(5);
    for (int k = 0; k < 10; ++k) gt.push_back(pool[rng.below(distinct)]);
    const std::string pred = pool[rng.below(5)];
    worst = std::max(worst, std::abs(vqa_accuracy(pred, gt) - enumerate_accuracy(pred, gt)));
  }
  auto with = [](std::size_t m) {
    std::vector<std::string> gt(m, "p");
    while (gt.size() < 10) gt.push_back("x");
    return vqa_accuracy("p", gt);
  };
  const bool values = std::abs(with(1) - 0.3) < 1e-12 && std::abs(with(2) - 0.6) < 1e-12 && std::abs(with(3) - 0.9) < 1e-12;
  return {worst <= 1e-12 && values, fmt("worst |closed form - enumeration| %.1e over 11 + 1000 fixtures; m=1,2,3 -> %.1f %.1f %.1f",
                                        worst, with(1), with(2), with(3))};
}

// 3 ---------------------------------------------------------------------------

Verdict attention_invariants() {
  Rng rng(3);
  double worst_sum = 0, worst_mean = 0;
  std::size_t equivariance_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5), d = 1 + rng.below(6), S = 1 + rng.below(6);
    const std::size_t C = 1 + rng.below(3), H = 1 + rng.below(6), L = h * w;
    const auto raw = random_tensor({L * d}, 1000 + trial, -3, 3);
    const auto fm = map_of(h, w, d, {raw.data().begin(), raw.data().end()});
    AttentionParams<double> p{random_tensor({d + S, H}, 2000 + trial), random_tensor({H}, 3000 + trial),
                              random_tensor({H, C}, 4000 + trial, -3, 3), random_tensor({C}, 5000 + trial)};
    const auto s = random_tensor({S}, 6000 + trial);
    const auto r = forward_attention(s, fm, p, {});
    for (std::size_t c = 0; c < C; ++c) {
      double total = 0;
      for (std::size_t l = 0; l < L; ++l) total += r.weights[l * C + c];
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
    // Constant logits: second layer zeroed.
    AttentionParams<double> flat{p.W1, p.b1, Td::zeros({H, C}), Td({C}, std::vector<double>(C, 0.7))};
    const auto rc = forward_attention(s, fm, flat, {});
    const auto mean = spatial_mean(fm);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < d; ++k) worst_mean = std::max(worst_mean, std::abs(rc.glimpses[c][k] - mean[k]));
    // Random permutation of the locations.
    std::vector<std::size_t> perm(L);
    for (std::size_t l = 0; l < L; ++l) perm[l] = l;
    for (std::size_t i = L; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<double> moved(L * d);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t k = 0; k < d; ++k) moved[perm[l] * d + k] = fm.values[l * d + k];
    const auto rp = forward_attention(s, map_of(h, w, d, moved), p, {});
    bool exact = true;
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c) exact &= rp.weights[perm[l] * C + c] == r.weights[l * C + c];
    for (std::size_t i = 0; i < r.x.size(); ++i) exact &= rp.x[i] == r.x[i];
    equivariance_failures += !exact;
  }
  return {worst_sum <= 1e-6 && worst_mean <= 1e-9 && equivariance_failures == 0,
          fmt("1000 inputs: worst |sum alpha - 1| %.1e, constant-logit vs spatial mean %.1e, %zu inexact permutations",
              worst_sum, worst_mean, equivariance_failures)};
}

// 4 ---------------------------------------------------------------------------

Verdict loss_consistency() {
  double worst = 0;
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t M = 2 + rng.below(20);
    const auto d = distribution_from_logits(random_tensor({M}, 100 + t, -4, 4));
    std::vector<int> ids;
    for (std::size_t k = 0, n = 1 + rng.below(10); k < n; ++k) ids.push_back(static_cast<int>(rng.below(M)));
    double mean = 0;
    for (int id : ids) mean -= std::log(d.probs[static_cast<std::size_t>(id)]) / static_cast<double>(ids.size());
    worst = std::max(worst, std::abs(averaged_nll(d, ids)->item() - mean));
  }
  const auto d = distribution_from_logits(random_tensor({8}, 7, -2, 2));
  const std::vector<int> ids{0, 0, 3, 5, 5, 5, 6, 1, 2, 7};
  const double target = averaged_nll(d, ids)->item();
  double mc = 0;
  const int samples = 100000;
  for (int s = 0; s < samples; ++s) mc += sampled_nll(d, ids, static_cast<std::uint64_t>(s))->item();
  mc /= samples;
  const double rel = std::abs(mc - target) / target;
  return {worst <= 1e-12 && rel < 0.01,
          fmt("averaged vs per-answer mean worst %.1e; sampled mean over 1e5 seeds %.5f vs %.5f (%.3f%%)", worst, mc,
              target, 100 * rel)};
}

// 5 ---------------------------------------------------------------------------

Verdict schedule() {
  const double a = learning_rate(0, 0.001, 50000), b = learning_rate(50000, 0.001, 50000),
               c = learning_rate(100000, 0.001, 50000);
  return {a == 0.001 && b == 0.0005 && c == 0.00025, fmt("lr(0, 50000, 100000) = %.17g %.17g %.17g", a, b, c)};
}

// 6 ---------------------------------------------------------------------------

struct OverfitResult {
  double best = 0;
  std::uint64_t step = 0;  // first milestone reaching the target, or the last step run
};

OverfitResult overfit(const TrainConfig& config, const DataDir& data, double stop_at) {
  const auto train = data.split("train");
  auto model = build_model<float>(config, train, nullptr, feature_depth_of(data, train));
  const auto prep = model;
  FeatureStore<float> store(data.features(), [prep](const FeatureMap<float>& raw) { return prep.prepare_features(raw); });
  Trainer<float> trainer(std::move(model), train, train, store);
  OverfitResult out;
  while (trainer.step_count() < config.total_steps) {
    const auto row = trainer.step();
    out.step = row.step;
    if (!row.eval_accuracy) continue;
    out.best = std::max(out.best, *row.eval_accuracy);
    if (out.best >= stop_at) break;
  }
  return out;
}

Verdict overfit_gap() {
  const auto t0 = Clock::now();
  SynthSpec spec;
  spec.examples = 32;
  spec.height = 4;
  spec.width = 4;
  spec.depth = 64;
  spec.question_vocab = 20;
  spec.answers = 6;
  const auto data = write_toy_data("acceptance_overfit", spec);
  auto config = scaled_default(4, 6);
  config.batch_size = 32;
  config.total_steps = 2000;
  config.milestone_scale = 50;
  const auto att = overfit(config, data, 0.95);
  config.attention_enabled = false;
  const auto flat = overfit(config, data, 2.0);
  const double elapsed = seconds_since(t0);
  return {att.best >= 0.95 && att.best - flat.best >= 0.10 && elapsed < 300,
          fmt("attention %.3f by step %llu; no attention best %.3f over %llu steps; %.0f s", att.best,
              static_cast<unsigned long long>(att.step), flat.best, static_cast<unsigned long long>(flat.step), elapsed)};
}

// 7 ---------------------------------------------------------------------------

Verdict determinism() {
  const auto data = write_toy_data("acceptance_det", toy_synth(5, 32, 8));
  auto config = toy_config(11);
  config.total_steps = 25;
  const auto root = temp_dir("acceptance_det_runs");
  const auto a = run_train(config, data, root / "a");
  const auto b = run_train(config, data, root / "b");
  const bool same = detail::read_file(a.final_checkpoint) == detail::read_file(b.final_checkpoint) &&
                    detail::read_file(a.metrics) == detail::read_file(b.metrics);
  const auto r = run_train(config, data, root / "r", root / "a" / checkpoint_name(12));
  const bool resumed = detail::read_file(r.final_checkpoint) == detail::read_file(a.final_checkpoint);
  return {same && resumed, fmt("two runs %s; resume from step 12 %s the uninterrupted step-25 checkpoint",
                               same ? "bitwise identical" : "DIFFER", resumed ? "matches" : "DIFFERS FROM")};
}

// 8 ---------------------------------------------------------------------------

Verdict ablation_completeness() {
  const auto t0 = Clock::now();
  const auto data = write_toy_data("acceptance_ablate", toy_synth(6, 32, 8));
  const auto suite = parse_suite(
      "size_scale = 64\nM = 6\nbatch_size = 4\ntotal_steps = 200\nmilestone_scale = 1000\nvariant all\n");
  const auto out = temp_dir("acceptance_ablate_out");
  const auto table = run_ablation(suite, data, out);
  std::size_t filled = 0;
  for (const auto& row : table.rows)
    for (auto c : table.columns) filled += table.get(row, c).has_value();
  const bool columns = table.columns == suite.base.effective_milestones() && table.columns.back() == 200;
  return {table.rows.size() == 24 && table.failures.empty() && table.complete() && columns,
          fmt("%zu variants, %zu failures, %zu/%zu cells; %.0f s", table.rows.size(), table.failures.size(), filled,
              table.rows.size() * table.columns.size(), seconds_since(t0))};
}

// 9 ---------------------------------------------------------------------------

Verdict format_round_trips() {
  const auto dir = temp_dir("acceptance_formats");
  auto fm = synthetic_feature_map<float>(3, 5, 7, 11, 4);
  auto values = fm.values.mutable_data();
  values[0] = -0.0f;
  values[1] = std::numeric_limits<float>::denorm_min();
  values[2] = std::numeric_limits<float>::max();
  save_feature_map(fm, dir / "a.saaf");
  save_feature_map(load_feature_map<float>(dir / "a.saaf"), dir / "b.saaf");
  const bool features = detail::read_file(dir / "a.saaf") == detail::read_file(dir / "b.saaf");

  const auto data = write_toy_data("acceptance_formats_data");
  auto config = toy_config(1);
  config.total_steps = 5;
  const auto run = run_train(config, data, dir / "run");
  save_checkpoint(load_checkpoint(run.final_checkpoint), dir / "again.saac");
  const auto snap = restore_checkpoint<float>(load_checkpoint(run.final_checkpoint));
  save_checkpoint(make_checkpoint(snap.model, snap.adam, snap.sampler ? &*snap.sampler : nullptr), dir / "rebuilt.saac");
  const auto original = detail::read_file(run.final_checkpoint);
  const bool ckpt = original == detail::read_file(dir / "again.saac") && original == detail::read_file(dir / "rebuilt.saac");
  return {features && ckpt, fmt("feature file %s; checkpoint (raw and via model restore) %s", features ? "identical" : "DIFFERS",
                                ckpt ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"metric oracle", metric_oracle},
      {"attention invariants", attention_invariants},
      {"loss consistency", loss_consistency},
      {"learning-rate schedule", schedule},
      {"overfit and attention gap", overfit_gap},
      {"determinism and resume", determinism},
      {"ablation completeness", ablation_completeness},
      {"format round trips", format_round_trips},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.contains(i + 1)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("criterion %zu (%s): %s  %s\n", i + 1, criteria[i].first.c_str(), v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
