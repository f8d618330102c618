#include "tm/toy_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <vector>

#include "tm/errors.hpp"

namespace tmatch {

namespace {

constexpr double kGmmRadius = 2.0;
constexpr double kGmmSigma = 0.1;
constexpr double kMoonsNoise = 0.05;
constexpr double kRingSigma = 0.05;

double parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError("bad number '" + s + "'");
  return v;
}

}  // namespace

double DatasetSpec::support_radius() const {
  switch (name) {
    case DatasetName::gmm8: return kGmmRadius + 6.0 * kGmmSigma;
    case DatasetName::two_moons: return 2.5 + 6.0 * kMoonsNoise;
    case DatasetName::checkerboard: return 2.0 * std::numbers::sqrt2;
    case DatasetName::ring: return 1.0 + 6.0 * kRingSigma;
    case DatasetName::gauss1d: return std::abs(mean) + 6.0 * stddev;
  }
  return 0.0;
}

DatasetSpec parse_dataset(const std::string& text) {
  DatasetSpec spec;
  if (text == "gmm8") {
    spec.name = DatasetName::gmm8;
  } else if (text == "two_moons") {
    spec.name = DatasetName::two_moons;
  } else if (text == "checkerboard") {
    spec.name = DatasetName::checkerboard;
  } else if (text == "ring") {
    spec.name = DatasetName::ring;
  } else if (text.rfind("gauss1d", 0) == 0) {
    spec.name = DatasetName::gauss1d;
    const auto open = text.find('(');
    const auto comma = text.find(',');
    const auto close = text.find(')');
    if (open == std::string::npos || comma == std::string::npos || close == std::string::npos ||
        !(open < comma && comma < close) || close + 1 != text.size()) {
      throw ConfigError("gauss1d needs parameters: gauss1d(mu,sigma)");
    }
    spec.mean = parse_double(text.substr(open + 1, comma - open - 1));
    spec.stddev = parse_double(text.substr(comma + 1, close - comma - 1));
    if (!(spec.stddev > 0.0) || !std::isfinite(spec.mean)) {
      throw ConfigError("gauss1d needs finite mu and sigma > 0");
    }
  } else {
    throw ConfigError("unknown dataset '" + text + "'");
  }
  return spec;
}

std::string to_string(const DatasetSpec& spec) {
  switch (spec.name) {
    case DatasetName::gmm8: return "gmm8";
    case DatasetName::two_moons: return "two_moons";
    case DatasetName::checkerboard: return "checkerboard";
    case DatasetName::ring: return "ring";
    case DatasetName::gauss1d: {
      char buf[96];
      std::snprintf(buf, sizeof buf, "gauss1d(%.17g,%.17g)", spec.mean, spec.stddev);
      return buf;
    }
  }
  return "?";
}

Samples sample_dataset(const DatasetSpec& spec, std::size_t count, Rng& rng) {
  if (count < 1) throw RangeError("sample_dataset needs N >= 1");
  const auto rows = static_cast<Eigen::Index>(count);
  Samples out(rows, spec.dimension());
  for (Eigen::Index i = 0; i < rows; ++i) {
    switch (spec.name) {
      case DatasetName::gmm8: {
        const auto k = static_cast<double>(rng.below(8));
        const double angle = 2.0 * std::numbers::pi * k / 8.0;
        out(i, 0) = kGmmRadius * std::cos(angle) + kGmmSigma * rng.normal();
        out(i, 1) = kGmmRadius * std::sin(angle) + kGmmSigma * rng.normal();
        break;
      }
      case DatasetName::two_moons: {
        // Upper moon centred on the origin, lower moon shifted by (1, -0.5),
        // then the pair recentred on (0.5, 0.25).
        const bool lower = rng.below(2) == 1;
        const double angle = std::numbers::pi * rng.uniform();
        double x = std::cos(angle);
        double y = std::sin(angle);
        if (lower) {
          x = 1.0 - x;
          y = 0.5 - y;
        }
        out(i, 0) = x - 0.5 + kMoonsNoise * rng.normal();
        out(i, 1) = y - 0.25 + kMoonsNoise * rng.normal();
        break;
      }
      case DatasetName::checkerboard: {
        // 4x4 board of unit cells on [-2, 2]^2; keep cells with even parity.
        const double x = 4.0 * rng.uniform() - 2.0;
        const double cell_x = std::floor(x + 2.0);
        const double row = 2.0 * static_cast<double>(rng.below(2));
        const double cell_y = row + std::fmod(cell_x, 2.0);
        out(i, 0) = x;
        out(i, 1) = cell_y + rng.uniform() - 2.0;
        break;
      }
      case DatasetName::ring: {
        const double angle = 2.0 * std::numbers::pi * rng.uniform();
        const double radius = 1.0 + kRingSigma * rng.normal();
        out(i, 0) = radius * std::cos(angle);
        out(i, 1) = radius * std::sin(angle);
        break;
      }
      case DatasetName::gauss1d:
        out(i, 0) = spec.mean + spec.stddev * rng.normal();
        break;
    }
  }
  return out;
}

Rng rng_stream(std::uint64_t master_seed, std::uint64_t stream_id) {
  return Rng::stream(master_seed, stream_id);
}

void write_samples_csv(std::ostream& out, const Samples& samples) {
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    out << (j ? "," : "") << "dim_" << j;
  }
  out << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", samples(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

Samples read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty samples csv");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index c = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(parse_double(cell));
      ++c;
    }
    if (c != cols) throw ShapeError("ragged samples csv row " + std::to_string(rows + 1));
    ++rows;
  }
  Samples out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = values[static_cast<std::size_t>(i * cols + j)];
  }
  return out;
}

}  // namespace tmatch
