#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "tm/rng.hpp"
#include "tm/state.hpp"

namespace tmatch {

enum class DatasetName { gmm8, two_moons, checkerboard, ring, gauss1d };

// A toy target distribution. `mean` and `stddev` parameterize gauss1d only.
struct DatasetSpec {
  DatasetName name = DatasetName::gmm8;
  double mean = 0.0;
  double stddev = 1.0;

  int dimension() const { return name == DatasetName::gauss1d ? 1 : 2; }
  // Radius containing all but a vanishing fraction of the mass (6 sigma).
  double support_radius() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// Parses "gmm8", "two_moons", "checkerboard", "ring" or "gauss1d(mu,sigma)".
DatasetSpec parse_dataset(const std::string& text);
std::string to_string(const DatasetSpec& spec);

// N samples, one per row. Pure function of (spec, N, rng state).
Samples sample_dataset(const DatasetSpec& spec, std::size_t count, Rng& rng);

// Reproducible handle for stream `stream_id` of `master_seed`.
Rng rng_stream(std::uint64_t master_seed, std::uint64_t stream_id);

// CSV with header dim_0,...,dim_{d-1}.
void write_samples_csv(std::ostream& out, const Samples& samples);
Samples read_samples_csv(std::istream& in);

}  // namespace tmatch
