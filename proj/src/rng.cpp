#include "tm/rng.hpp"

#include <cmath>
#include <numbers>

namespace tmatch {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)) {}

Rng Rng::stream(std::uint64_t master_seed, std::uint64_t stream_id) {
  Rng r(master_seed);
  r.key_ = mix64(r.key_ ^ mix64(stream_id * kGolden + 0x632be59bd9b4e019ULL));
  return r;
}

Rng Rng::split(std::uint64_t stream_id) const {
  Rng r(0);
  r.key_ = mix64(key_ ^ mix64(stream_id * kGolden + 0x8cb92ba72f3d8dd7ULL));
  return r;
}

std::uint64_t Rng::next() {
  // Two rounds keyed on both sides of the counter.
  const std::uint64_t c = counter_++;
  return mix64(mix64(c * kGolden ^ key_) + key_);
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  // Lemire's multiply-shift with rejection.
  unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = -n % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace tmatch
