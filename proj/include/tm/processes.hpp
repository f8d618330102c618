#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tm/rng.hpp"
#include "tm/state.hpp"

namespace tmatch {

enum class SchedulerKind { uniform, exponential };

// Transition-time grid 0 = r_0 < r_1 < ... < r_T = 1.
struct Scheduler {
  SchedulerKind kind = SchedulerKind::uniform;
  int T = 1;

  double ratio(int index) const;
  // r_{t+1} - r_t
  double step(int t) const { return ratio(t + 1) - ratio(t); }
};

// Uniform: index / T. Exponential: 1 - 2^-index for index < T and 1 at T,
// which for T = 3 gives the ladder {0, 0.5, 0.75, 1}.
inline constexpr int kMaxExponentialT = 54;
double scheduler_ratio(const Scheduler& s, int index);

std::string to_string(SchedulerKind kind);
SchedulerKind scheduler_kind_from_string(const std::string& name);

enum class ProcessKind { dependent, independent, full_history };
std::string to_string(ProcessKind kind);
ProcessKind process_kind_from_string(const std::string& name);

// Fresh N(0, I) state shaped like `like`.
State draw_noise(const State& like, Rng& rng);

// (1 - r) x0 + r xT
State interpolate(const State& x0, const State& xT, double r);

struct LinearTriple {
  State x0;
  State x_t;
  State x_next;
};

// Dependent (shared-noise) linear process: a single x0 ~ N(0, I) drives both
// x_t and x_{t+1}.
LinearTriple linear_pair(const State& xT, int t, const Scheduler& sched, Rng& rng);
// Same construction with the source point supplied by the caller.
LinearTriple linear_pair_with_noise(const State& xT, int t, const Scheduler& sched, const State& x0);

struct IndependentPair {
  State x_t;
  State x_next;
  State noise_t;
  State noise_next;
};

// Independent linear process: each level gets its own noise draw.
IndependentPair independent_linear_pair(const State& xT, int t, const Scheduler& sched, Rng& rng);

// X_0 ... X_T of the independent linear process, one noise draw per level.
std::vector<State> full_history_sample(const State& xT, const Scheduler& sched, Rng& rng);

// One training tuple (t, x_t, y[, history]).
struct ProcessSample {
  int t = 0;
  double ratio = 0.0;  // r_t, or the drawn continuous ratio
  State x_t;
  State y;
  std::optional<std::vector<State>> history;
};

// Draw t ~ U{0..T-1} (or r ~ U[0,1) when continuous) and build the tuple:
// dependent -> y = xT - x0, independent -> y = x_{t+1}, full_history -> y =
// x_{t+1} with the whole history X_0..X_t attached.
ProcessSample draw_process_sample(ProcessKind kind, const State& xT, const Scheduler& sched,
                                  bool continuous_time, Rng& rng);

}  // namespace tmatch
