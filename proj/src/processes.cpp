#include "tm/processes.hpp"

#include <cmath>

#include "tm/errors.hpp"
#include "tm/parameterizations.hpp"

namespace tmatch {

double scheduler_ratio(const Scheduler& s, int index) {
  if (s.T < 1) throw RangeError("scheduler needs T >= 1");
  // 1 - 2^-k rounds to 1 in double precision for k > 53.
  if (s.kind == SchedulerKind::exponential && s.T > kMaxExponentialT)
    throw RangeError("exponential scheduler needs T <= " + std::to_string(kMaxExponentialT));
  if (index < 0 || index > s.T) {
    throw RangeError("scheduler index " + std::to_string(index) + " outside [0, " +
                     std::to_string(s.T) + "]");
  }
  if (index == s.T) return 1.0;
  switch (s.kind) {
    case SchedulerKind::uniform:
      return static_cast<double>(index) / s.T;
    case SchedulerKind::exponential:
      return 1.0 - std::ldexp(1.0, -index);
  }
  return 0.0;
}

double Scheduler::ratio(int index) const { return scheduler_ratio(*this, index); }

std::string to_string(SchedulerKind kind) {
  return kind == SchedulerKind::uniform ? "uniform" : "exponential";
}

SchedulerKind scheduler_kind_from_string(const std::string& name) {
  if (name == "uniform") return SchedulerKind::uniform;
  if (name == "exponential") return SchedulerKind::exponential;
  throw ConfigError("unknown scheduler '" + name + "'");
}

std::string to_string(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::dependent: return "dependent";
    case ProcessKind::independent: return "independent";
    case ProcessKind::full_history: return "full_history";
  }
  return "?";
}

ProcessKind process_kind_from_string(const std::string& name) {
  if (name == "dependent") return ProcessKind::dependent;
  if (name == "independent") return ProcessKind::independent;
  if (name == "full_history") return ProcessKind::full_history;
  throw ConfigError("unknown process '" + name + "'");
}

State draw_noise(const State& like, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(like.dim()));
  for (double& x : v) x = rng.normal();
  return State(std::move(v), like.tokens());
}

State interpolate(const State& x0, const State& xT, double r) {
  require_same_shape(x0, xT, "interpolate");
  std::vector<double> v(static_cast<std::size_t>(x0.dim()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (1.0 - r) * x0[i] + r * xT[i];
  return State(std::move(v), x0.tokens());
}

namespace {
void check_t(int t, const Scheduler& sched) {
  if (t < 0 || t > sched.T - 1) {
    throw RangeError("transition index " + std::to_string(t) + " outside [0, " +
                     std::to_string(sched.T - 1) + "]");
  }
}
}  // namespace

LinearTriple linear_pair_with_noise(const State& xT, int t, const Scheduler& sched, const State& x0) {
  check_t(t, sched);
  require_same_shape(x0, xT, "linear_pair");
  State x_t = interpolate(x0, xT, sched.ratio(t));
  State x_next = interpolate(x0, xT, sched.ratio(t + 1));
  return {x0, std::move(x_t), std::move(x_next)};
}

LinearTriple linear_pair(const State& xT, int t, const Scheduler& sched, Rng& rng) {
  check_t(t, sched);
  return linear_pair_with_noise(xT, t, sched, draw_noise(xT, rng));
}

IndependentPair independent_linear_pair(const State& xT, int t, const Scheduler& sched, Rng& rng) {
  check_t(t, sched);
  State n0 = draw_noise(xT, rng);
  State n1 = draw_noise(xT, rng);
  State x_t = interpolate(n0, xT, sched.ratio(t));
  State x_next = interpolate(n1, xT, sched.ratio(t + 1));
  return {std::move(x_t), std::move(x_next), std::move(n0), std::move(n1)};
}

std::vector<State> full_history_sample(const State& xT, const Scheduler& sched, Rng& rng) {
  std::vector<State> history;
  history.reserve(static_cast<std::size_t>(sched.T) + 1);
  for (int t = 0; t <= sched.T; ++t) {
    if (t == sched.T) {
      history.push_back(xT);
    } else {
      history.push_back(interpolate(draw_noise(xT, rng), xT, sched.ratio(t)));
    }
  }
  return history;
}

ProcessSample draw_process_sample(ProcessKind kind, const State& xT, const Scheduler& sched,
                                  bool continuous_time, Rng& rng) {
  ProcessSample out;
  if (continuous_time) {
    if (kind != ProcessKind::dependent) {
      throw ConfigError("continuous time is only defined for the dependent process");
    }
    out.t = -1;
    out.ratio = rng.uniform();
    State x0 = draw_noise(xT, rng);
    out.x_t = interpolate(x0, xT, out.ratio);
    out.y = difference_latent(x0, xT);
    return out;
  }
  out.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
  out.ratio = sched.ratio(out.t);
  switch (kind) {
    case ProcessKind::dependent: {
      auto triple = linear_pair(xT, out.t, sched, rng);
      out.x_t = std::move(triple.x_t);
      out.y = difference_latent(triple.x0, xT);
      break;
    }
    case ProcessKind::independent: {
      auto pair = independent_linear_pair(xT, out.t, sched, rng);
      out.x_t = std::move(pair.x_t);
      out.y = next_state_latent(pair.x_next);
      break;
    }
    case ProcessKind::full_history: {
      auto history = full_history_sample(xT, sched, rng);
      out.x_t = history[static_cast<std::size_t>(out.t)];
      out.y = next_state_latent(history[static_cast<std::size_t>(out.t) + 1]);
      history.resize(static_cast<std::size_t>(out.t) + 1);
      out.history = std::move(history);
      break;
    }
  }
  return out;
}

}  // namespace tmatch
