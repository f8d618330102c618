#pragma once

#include <string>

#include "tm/processes.hpp"
#include "tm/state.hpp"

namespace tmatch {

// Which latent Y the transition kernel is parameterized by.
enum class LatentKind { difference, next_state };
std::string to_string(LatentKind kind);

// Y = xT - x0.
State difference_latent(const State& x0, const State& xT);

// x_{t+1} = x_t + (r_{t+1} - r_t) y; for the uniform grid this is x_t + y / T.
State dtm_reconstruct(const State& x_t, const State& y, const Scheduler& sched, int t);

// Y = x_{t+1}.
State next_state_latent(const State& x_next);

// Identity kernel: the latent is the next state.
State next_state_reconstruct(const State& x_t, const State& y);

// Whether a latent may be paired with a supervising process.
bool compatible(LatentKind latent, ProcessKind process);

}  // namespace tmatch
