#pragma once

#include "tm/net.hpp"

namespace tmatch {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  ParamSet<S> m;
  ParamSet<S> v;
  long step = 0;

  static AdamState for_params(const ParamSet<S>& params);
};

// One bias-corrected Adam update at learning rate `lr` (overrides config.lr
// when positive).
template <typename S>
void optimizer_step(ParamSet<S>& params, const ParamSet<S>& grads, AdamState<S>& state, const AdamConfig& config,
                    double lr = -1.0);

}  // namespace tmatch
