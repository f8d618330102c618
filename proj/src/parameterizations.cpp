#include "tm/parameterizations.hpp"

#include "tm/errors.hpp"

namespace tmatch {

std::string to_string(LatentKind kind) {
  return kind == LatentKind::difference ? "difference" : "next_state";
}

State difference_latent(const State& x0, const State& xT) {
  require_same_shape(x0, xT, "difference_latent");
  std::vector<double> y(static_cast<std::size_t>(x0.dim()));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xT[i] - x0[i];
  return State(std::move(y), x0.tokens());
}

State dtm_reconstruct(const State& x_t, const State& y, const Scheduler& sched, int t) {
  require_same_shape(x_t, y, "dtm_reconstruct");
  if (t < 0 || t > sched.T - 1) throw RangeError("dtm_reconstruct: transition index out of range");
  const double step = sched.step(t);
  std::vector<double> next(static_cast<std::size_t>(x_t.dim()));
  for (std::size_t i = 0; i < next.size(); ++i) next[i] = x_t[i] + step * y[i];
  return State(std::move(next), x_t.tokens());
}

State next_state_latent(const State& x_next) { return x_next; }

State next_state_reconstruct(const State& x_t, const State& y) {
  require_same_shape(x_t, y, "next_state_reconstruct");
  return y;
}

bool compatible(LatentKind latent, ProcessKind process) {
  if (latent == LatentKind::difference) return process == ProcessKind::dependent;
  return process != ProcessKind::dependent;
}

}  // namespace tmatch
