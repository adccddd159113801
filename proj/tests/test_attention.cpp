#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "saaa/attention.hpp"
#include "saaa/feature_map.hpp"
#include "support/gradcheck.hpp"

using namespace saaa;
using saaa_test::random_tensor;

namespace {

using Td = Tensor<double>;

FeatureMap<double> map_from(const Td& values) {
  FeatureMap<double> fm;
  fm.height = values.dim(0);
  fm.width = values.dim(1);
  fm.depth = values.dim(2);
  fm.values = values;
  return fm;
}

FeatureMap<double> random_map(std::size_t h, std::size_t w, std::size_t d, std::uint64_t seed) {
  return map_from(random_tensor({h, w, d}, seed));
}

AttentionParams<double> random_params(std::size_t depth, std::size_t state, std::size_t hidden, std::size_t C,
                                      std::uint64_t seed) {
  return {random_tensor({depth + state, hidden}, seed), random_tensor({hidden}, seed + 1),
          random_tensor({hidden, C}, seed + 2), random_tensor({C}, seed + 3)};
}

// Two-layer MLP applied location by location.
std::vector<double> oracle_logits(const Td& s, const FeatureMap<double>& fm, const AttentionParams<double>& p) {
  const std::size_t L = fm.locations(), D = fm.depth, S = s.size(), H = p.W1.dim(1), C = p.W2.dim(1);
  std::vector<double> out(L * C);
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> in;
    for (std::size_t d = 0; d < D; ++d) in.push_back(fm.values[l * D + d]);
    for (std::size_t k = 0; k < S; ++k) in.push_back(s[k]);
    std::vector<double> hid(H);
    for (std::size_t j = 0; j < H; ++j) {
      double acc = p.b1[j];
      for (std::size_t i = 0; i < D + S; ++i) acc += in[i] * p.W1[i * H + j];
      hid[j] = std::max(0.0, acc);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double acc = p.b2[c];
      for (std::size_t j = 0; j < H; ++j) acc += hid[j] * p.W2[j * C + c];
      out[l * C + c] = acc;
    }
  }
  return out;
}

}  // namespace

TEST(AttentionLogits, ZeroParametersGiveZeroLogits) {
  AttentionParams<double> p{Td::zeros({3 + 2, 4}), Td::zeros({4}), Td::zeros({4, 2}), Td::zeros({2})};
  const auto logits = attention_logits(random_tensor({2}, 1), random_map(2, 2, 3, 2), p, {});
  EXPECT_EQ(logits.shape(), (Shape{4, 2}));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionLogits, ConstantMapGivesEqualLogits) {
  const auto p = random_params(3, 2, 5, 2, 10);
  Td constant({2, 3, 3}, std::vector<double>(18, 0.3));
  constant = Td({2, 3, 3}, [] {
    std::vector<double> v;
    for (int l = 0; l < 6; ++l) v.insert(v.end(), {0.3, -0.2, 0.9});
    return v;
  }());
  const auto logits = attention_logits(random_tensor({2}, 1), map_from(constant), p, {});
  for (std::size_t l = 1; l < 6; ++l)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(logits[l * 2 + c], logits[c]);
}

TEST(AttentionLogits, MatchesPerLocationOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fm = random_map(2, 2, 3, seed);
    const auto s = random_tensor({4}, seed + 50);
    const auto p = random_params(3, 4, 6, 2, seed + 100);
    const auto got = attention_logits(s, fm, p, {});
    const auto want = oracle_logits(s, fm, p);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10);
  }
}

TEST(AttentionLogits, RejectsMismatch) {
  const auto p = random_params(3, 4, 6, 2, 1);
  EXPECT_THROW(attention_logits(random_tensor({5}, 1), random_map(2, 2, 3, 1), p, {}), InvalidShape);
  EXPECT_THROW(attention_logits(random_tensor({4}, 1), random_map(2, 2, 4, 1), p, {}), InvalidShape);
}

TEST(AttentionWeights, Examples) {
  const auto uniform = attention_weights(Td::zeros({4, 2}));
  for (double v : uniform.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_DOUBLE_EQ(attention_weights(Td({1, 3}, {5.0, -2.0, 40.0}))[1], 1.0);
  const auto col = attention_weights(Td({2, 1}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(col[0], 0.25, 1e-15);
  EXPECT_NEAR(col[1], 0.75, 1e-15);
}

TEST(ComputeGlimpses, UniformAndOneHot) {
  const auto fm = random_map(2, 3, 4, 3);
  const auto uniform = compute_glimpses(Td::filled({6, 2}, 1.0 / 6), fm);
  const auto mean = spatial_mean(fm);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(uniform.glimpses[c][d], mean[d], 1e-15);
  std::vector<double> onehot(12, 0.0);
  onehot[4 * 2 + 0] = 1.0;  // glimpse 0 at location 4
  onehot[1 * 2 + 1] = 1.0;  // glimpse 1 at location 1
  const auto sel = compute_glimpses(Td({6, 2}, onehot), fm);
  for (std::size_t d = 0; d < 4; ++d) {
    EXPECT_EQ(sel.glimpses[0][d], fm.values[4 * 4 + d]);
    EXPECT_EQ(sel.glimpses[1][d], fm.values[1 * 4 + d]);
    EXPECT_EQ(sel.x[d], fm.values[4 * 4 + d]);
    EXPECT_EQ(sel.x[4 + d], fm.values[1 * 4 + d]);
  }
}

TEST(ComputeGlimpses, MatchesWeightedSumLoop) {
  const auto fm = random_map(3, 3, 5, 8);
  const auto alpha = attention_weights(random_tensor({9, 3}, 9, -2, 2));
  const auto r = compute_glimpses(alpha, fm);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t d = 0; d < 5; ++d) {
      double acc = 0;
      for (std::size_t l = 0; l < 9; ++l) acc += alpha[l * 3 + c] * fm.values[l * 5 + d];
      EXPECT_NEAR(r.glimpses[c][d], acc, 1e-12);
    }
}

TEST(ForwardAttention, PaperShapes) {
  const auto fm = synthetic_feature_map<float>(1, 14, 14, 2048, 1);
  const auto p = make_attention_params<float>(2048, 8, 4, 2, 3);
  const auto r = forward_attention(Tensor<float>::filled({8}, 0.1f), fm, p, {});
  EXPECT_EQ(r.x.size(), 4096u);
  EXPECT_EQ(r.weights.shape(), (Shape{196, 2}));
}

TEST(ForwardAttention, ZeroSecondLayerIsSpatialMean) {
  const auto fm = random_map(2, 2, 3, 4);
  auto p = random_params(3, 2, 5, 2, 5);
  p.W2 = Td::zeros({5, 2});
  p.b2 = Td::zeros({2});
  const auto r = forward_attention(random_tensor({2}, 6), fm, p, {});
  const auto mean = spatial_mean(fm);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(r.glimpses[c][d], mean[d], 1e-15);
}

TEST(AttentionInvariants, NormalizedConvexAndEquivariant) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.below(3), w = 1 + rng.below(3), d = 1 + rng.below(4), S = 1 + rng.below(3);
    const std::size_t C = 1 + rng.below(3);
    const auto fm = random_map(h, w, d, 1000 + trial);
    const auto p = random_params(d, S, 4, C, 2000 + trial);
    const auto s = random_tensor({S}, 3000 + trial);
    const auto r = forward_attention(s, fm, p, {});
    const std::size_t L = h * w;
    for (std::size_t c = 0; c < C; ++c) {
      double total = 0;
      for (std::size_t l = 0; l < L; ++l) {
        const double a = r.weights[l * C + c];
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
        total += a;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
      for (std::size_t k = 0; k < d; ++k) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t l = 0; l < L; ++l) {
          lo = std::min(lo, fm.values[l * d + k]);
          hi = std::max(hi, fm.values[l * d + k]);
        }
        EXPECT_GE(r.glimpses[c][k], lo - 1e-12);
        EXPECT_LE(r.glimpses[c][k], hi + 1e-12);
      }
    }
    // Reverse the locations (a 1 x L map keeps the same location set).
    std::vector<double> rev(L * d);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t k = 0; k < d; ++k) rev[(L - 1 - l) * d + k] = fm.values[l * d + k];
    const auto pr = forward_attention(s, map_from(Td({1, L, d}, rev)), p, {});
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c) EXPECT_EQ(pr.weights[(L - 1 - l) * C + c], r.weights[l * C + c]);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(pr.glimpses[c][k], r.glimpses[c][k]);
    for (std::size_t i = 0; i < r.x.size(); ++i) EXPECT_EQ(pr.x[i], r.x[i]);
  }
}

TEST(AttentionParams, CountMatchesFormula) {
  for (auto [depth, state, hidden, C] : std::vector<std::array<std::size_t, 4>>{{4, 16, 8, 2}, {2048, 1024, 512, 2}, {7, 3, 5, 3}}) {
    ParamStore<float> store;
    register_attention(store, make_attention_params<float>(depth, state, hidden, C, 1));
    EXPECT_EQ(store.parameter_count(), (depth + state) * hidden + hidden + hidden * C + C);
    EXPECT_EQ(store.parameter_count(), AttentionParams<float>::parameter_count(depth, state, hidden, C));
  }
  EXPECT_THROW(make_attention_params<float>(4, 4, 4, 0, 1), InvalidArgument);
}

TEST(AttentionParams, DistinctInitializationsGiveDistinctGlimpses) {
  const auto fm = random_map(3, 3, 4, 21);
  const auto s = random_tensor({3}, 22);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = make_attention_params<double>(4, 3, 8, 2, seed);
    const auto r = forward_attention(s, fm, p, {});
    double diff = 0;
    for (std::size_t d = 0; d < 4; ++d) diff = std::max(diff, std::abs(r.glimpses[0][d] - r.glimpses[1][d]));
    EXPECT_GT(diff, 1e-6) << "seed " << seed;
  }
}

TEST(AttentionGradients, FiniteDifferenceOnToyMap) {
  ParamStore<double> store;
  auto phi = store.add("phi", random_tensor({2, 2, 4}, 31));
  auto s = store.add("s", random_tensor({3}, 32));
  const auto p = random_params(4, 3, 5, 2, 33);
  register_attention(store, p);
  const auto weights = random_tensor({8}, 34);
  for (bool training : {false, true}) {
    auto loss = [&] {
      const auto r = forward_attention(s, map_from(phi), p, {training, 0.5, 35});
      return sum(mul(r.x, weights));
    };
    const auto report = saaa_test::check_gradients(store, loss);
    EXPECT_LT(report.max_error, 1e-4) << report.worst;
  }
}

TEST(AttentionDropout, DeterministicBySeed) {
  const auto fm = random_map(2, 2, 3, 1);
  const auto p = random_params(3, 2, 6, 2, 2);
  const auto s = random_tensor({2}, 3);
  const auto a = forward_attention(s, fm, p, {true, 0.5, 9}).x;
  const auto b = forward_attention(s, fm, p, {true, 0.5, 9}).x;
  const auto c = forward_attention(s, fm, p, {true, 0.5, 10}).x;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  bool any = false;
  for (std::size_t i = 0; i < a.size(); ++i) any = any || a[i] != c[i];
  EXPECT_TRUE(any);
}
