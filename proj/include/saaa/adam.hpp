#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/tensor.hpp"

namespace saaa {

/// l0 * 0.5^(step / decay_steps), continuous in step.
inline double learning_rate(std::uint64_t step, double l0, std::uint64_t decay_steps) {
  if (decay_steps == 0) throw InvalidArgument("decay_steps must be positive");
  return l0 * std::pow(0.5, static_cast<double>(step) / static_cast<double>(decay_steps));
}

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

template <typename T>
struct AdamState {
  std::map<std::string, AdamMoments<T>> moments;
  std::uint64_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. Parameters without an entry in `grads`
/// (and their moments) are left untouched.
template <typename T>
void adam_step(ParamStore<T>& store, const GradientMap<T>& grads, AdamState<T>& state, double lr,
               const AdamHyper& hyper) {
  for (const auto& [name, g] : grads) {
    if (!store.contains(name)) throw InvalidArgument("adam_step: gradient for unknown parameter " + name);
    if (store.at(name).shape() != g.shape()) {
      throw InvalidShape("adam_step: gradient shape " + shape_string(g.shape()) + " for parameter " + name + " " +
                         shape_string(store.at(name).shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  for (const auto& [name, g] : grads) {
    auto param = store.at(name).mutable_data();
    auto& mom = state.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(param.size(), T(0));
      mom.v.assign(param.size(), T(0));
    }
    const auto gd = g.data();
    for (std::size_t i = 0; i < param.size(); ++i) {
      mom.m[i] = b1 * mom.m[i] + (T(1) - b1) * gd[i];
      mom.v[i] = b2 * mom.v[i] + (T(1) - b2) * gd[i] * gd[i];
      const double m_hat = static_cast<double>(mom.m[i]) / correction1;
      const double v_hat = static_cast<double>(mom.v[i]) / correction2;
      param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon));
    }
  }
}

/// Scales all gradients so their global l2 norm is at most `max_norm`. Returns the norm before clipping.
template <typename T>
double clip_by_global_norm(GradientMap<T>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [_, g] : grads)
    for (T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& [_, g] : grads)
      for (auto& v : g.mutable_data()) v *= f;
  }
  return norm;
}

}  // namespace saaa
