#pragma once

#include <cstdint>
#include <limits>

namespace tmatch {

// Counter-based 64-bit generator. Output k of a stream is a pure function of
// (key, k), so streams derived from (master seed, stream id) are reproducible
// on every platform and never share state.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  // Independent stream `stream_id` of `master_seed`.
  static Rng stream(std::uint64_t master_seed, std::uint64_t stream_id);

  // Child stream keyed off this generator's key; does not advance it.
  Rng split(std::uint64_t stream_id) const;

  std::uint64_t operator()() { return next(); }
  std::uint64_t next();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace tmatch
