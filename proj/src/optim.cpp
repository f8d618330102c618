#include "tm/optim.hpp"

#include <cmath>

#include "tm/errors.hpp"

namespace tmatch {

template <typename S>
AdamState<S> AdamState<S>::for_params(const ParamSet<S>& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

template <typename S>
void optimizer_step(ParamSet<S>& params, const ParamSet<S>& grads, AdamState<S>& state, const AdamConfig& config,
                    double lr) {
  if (grads.tensors.size() != params.tensors.size() || state.m.tensors.size() != params.tensors.size()) {
    throw ShapeError("optimizer: parameter / gradient layout mismatch");
  }
  const double rate = lr > 0.0 ? lr : config.lr;
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(config.beta1);
  const S b2 = static_cast<S>(config.beta2);
  const S step_size = static_cast<S>(rate / c1);
  const S inv_c2 = static_cast<S>(1.0 / c2);
  const S eps = static_cast<S>(config.eps);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    const auto& g = grads.tensors[i];
    if (p.rows() != g.rows() || p.cols() != g.cols()) throw ShapeError("optimizer: tensor shape mismatch");
    auto& m = state.m.tensors[i];
    auto& v = state.v.tensors[i];
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const S gk = g.data()[k];
      S& mk = m.data()[k];
      S& vk = v.data()[k];
      mk = b1 * mk + (S(1) - b1) * gk;
      vk = b2 * vk + (S(1) - b2) * gk * gk;
      p.data()[k] -= step_size * mk / (std::sqrt(vk * inv_c2) + eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void optimizer_step<float>(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&, const AdamConfig&,
                                    double);
template void optimizer_step<double>(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&,
                                     const AdamConfig&, double);

}  // namespace tmatch
