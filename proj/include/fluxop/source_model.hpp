#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

#include "fluxop/error.hpp"
#include "fluxop/rng.hpp"

namespace fluxop {

using Vec3 = std::array<double, 3>;

/// Mono-energetic Gaussian source: energy in MeV, mean and standard
/// deviation per axis in cm. A zero sigma marks a delta (degenerate) axis.
struct SourceSpec {
  double energy_mev = 0.5;
  Vec3 mu{0.0, 0.0, 0.0};
  Vec3 sigma{1.0, 1.0, 0.0};
  std::uint64_t id = 0;

  bool operator==(const SourceSpec&) const = default;
};

/// Diagonal covariance. Off-diagonal entries are zero by construction.
struct CovarianceMatrix {
  Vec3 diagonal{};

  double operator()(std::size_t i, std::size_t j) const { return i == j ? diagonal[i] : 0.0; }
};

inline CovarianceMatrix make_covariance(const Vec3& sigma) {
  CovarianceMatrix c;
  for (std::size_t j = 0; j < 3; ++j) {
    if (!(sigma[j] >= 0.0)) throw DomainError("make_covariance: negative standard deviation");
    c.diagonal[j] = sigma[j] * sigma[j];
  }
  return c;
}

/// Product of 1D normal densities over the axes with sigma > 0. Degenerate
/// axes are delta constraints and do not enter the product.
inline double gaussian_density(const Vec3& x, const SourceSpec& spec) {
  double density = 1.0;
  for (std::size_t j = 0; j < 3; ++j) {
    const double s = spec.sigma[j];
    if (s < 0.0) throw DomainError("gaussian_density: negative standard deviation");
    if (s == 0.0) continue;
    const double d = x[j] - spec.mu[j];
    density *= std::exp(-d * d / (2.0 * s * s)) / std::sqrt(2.0 * std::numbers::pi * s * s);
  }
  return density;
}

/// Energy density u(E, x) = E * phi(x).
inline double source_intensity(const Vec3& x, const SourceSpec& spec) {
  return spec.energy_mev * gaussian_density(x, spec);
}

/// Sampling ranges. Energy is drawn from the open interval (energy_lo,
/// energy_hi), mu_y from [mu_y_lo, mu_y_hi]; the remaining components are fixed.
struct SourceRanges {
  double energy_lo = 0.0;
  double energy_hi = 1.0;
  double mu_y_lo = -9.0;
  double mu_y_hi = 9.0;
  double mu_x = 0.0;
  double mu_z = 0.0;
  Vec3 sigma{1.0, 1.0, 0.0};

  void validate() const {
    if (!(energy_lo >= 0.0) || !(energy_hi > energy_lo))
      throw ConfigError("source ranges: energy range must satisfy 0 <= lo < hi");
    if (!(mu_y_hi >= mu_y_lo)) throw ConfigError("source ranges: inverted mu_y range");
    for (double s : sigma)
      if (!(s >= 0.0)) throw ConfigError("source ranges: negative sigma");
  }
};

inline SourceSpec sample_source_spec(RngStream& rng, const SourceRanges& ranges = {}) {
  ranges.validate();
  SourceSpec spec;
  double e;
  do {
    e = rng.uniform(ranges.energy_lo, ranges.energy_hi);
  } while (e <= ranges.energy_lo || e >= ranges.energy_hi);
  spec.energy_mev = e;
  spec.mu = {ranges.mu_x, rng.uniform(ranges.mu_y_lo, ranges.mu_y_hi), ranges.mu_z};
  spec.sigma = ranges.sigma;
  return spec;
}

enum class Axis : std::uint8_t { x = 0, y = 1 };

/// m evenly spaced sensors on [lo, hi], both endpoints included.
struct SensorGrid {
  Axis axis = Axis::y;
  std::size_t count = 190;
  double lo = -9.0;
  double hi = 9.0;

  double spacing() const { return count > 1 ? (hi - lo) / static_cast<double>(count - 1) : 0.0; }

  double position(std::size_t i) const {
    if (i + 1 == count) return hi;
    return lo + spacing() * static_cast<double>(i);
  }

  std::vector<double> positions() const {
    std::vector<double> p(count);
    for (std::size_t i = 0; i < count; ++i) p[i] = position(i);
    return p;
  }

  void validate() const {
    if (count == 0) throw ConfigError("sensor grid: count must be positive");
    if (count > 1 && !(hi > lo)) throw ConfigError("sensor grid: hi must exceed lo");
  }

  bool operator==(const SensorGrid&) const = default;
};

struct SensorVector {
  std::vector<double> values;
  std::uint64_t spec_id = 0;

  bool operator==(const SensorVector&) const = default;
};

/// Samples u(E, x) at every sensor. Off-axis coordinates sit at the
/// spec's mean on those axes.
inline SensorVector discretize_source(const SourceSpec& spec, const SensorGrid& grid) {
  grid.validate();
  SensorVector out;
  out.spec_id = spec.id;
  out.values.resize(grid.count);
  const std::size_t a = static_cast<std::size_t>(grid.axis);
  for (std::size_t i = 0; i < grid.count; ++i) {
    Vec3 x = spec.mu;
    x[a] = grid.position(i);
    out.values[i] = source_intensity(x, spec);
  }
  return out;
}

}  // namespace fluxop
