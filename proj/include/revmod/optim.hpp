#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "revmod/core.hpp"

namespace revmod {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;  // keyed by parameter group name
};

/// One parameter group with its gradient for an optimizer step.
struct ParamUpdate {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

/// Bias-corrected Adam update over all groups. Any non-finite gradient aborts
/// the step before any parameter or moment is touched.
inline void adam_step(AdamState& state, std::span<const ParamUpdate> groups) {
  for (const auto& g : groups) {
    require_dims(g.value.size() == g.grad.size(), "adam: gradient shape mismatch for group " + g.name);
    if (!all_finite(g.grad)) throw NumericError("adam: non-finite gradient in group " + g.name);
    auto it = state.moments.find(g.name);
    if (it != state.moments.end())
      require_dims(it->second.m.size() == g.value.size(), "adam: moment shape mismatch for group " + g.name);
  }
  ++state.step;
  const auto& hp = state.hyper;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (const auto& g : groups) {
    auto& mom = state.moments[g.name];
    if (mom.m.empty()) {
      mom.m.assign(g.value.size(), 0.0);
      mom.v.assign(g.value.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.value.size(); ++i) {
      const double gi = g.grad[i];
      mom.m[i] = hp.beta1 * mom.m[i] + (1.0 - hp.beta1) * gi;
      mom.v[i] = hp.beta2 * mom.v[i] + (1.0 - hp.beta2) * gi * gi;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      g.value[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

inline void adam_step(AdamState& state, std::initializer_list<ParamUpdate> groups) {
  adam_step(state, std::span<const ParamUpdate>(groups.begin(), groups.size()));
}

}  // namespace revmod
