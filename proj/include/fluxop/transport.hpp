#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "fluxop/error.hpp"
#include "fluxop/geometry.hpp"
#include "fluxop/parallel.hpp"
#include "fluxop/rng.hpp"
#include "fluxop/source_model.hpp"
#include "fluxop/tally.hpp"

namespace fluxop {

struct RunPlan {
  std::size_t particles_per_batch = 100000;
  std::size_t batches = 100;
  std::uint64_t seed = 1;

  std::size_t histories() const { return particles_per_batch * batches; }

  void validate() const {
    if (particles_per_batch == 0) throw ConfigError("run plan: particles_per_batch must be positive");
    if (batches == 0) throw ConfigError("run plan: batches must be positive");
  }
};

/// Hard cap on flights per history; histories that hit it are terminated
/// and counted.
inline constexpr std::size_t kMaxSegmentsPerHistory = 10000;

struct Birth {
  std::array<double, 2> position{};
  double weight = 1.0;
};

struct Direction {
  double ux = 1.0;
  double uy = 0.0;
};

/// Position drawn from the source Gaussian in the xy-plane; z is dropped.
/// The weight carries the source energy.
inline Birth sample_birth(const SourceSpec& spec, RngStream& rng) {
  Birth b;
  for (std::size_t a = 0; a < 2; ++a)
    b.position[a] = spec.sigma[a] > 0.0 ? rng.normal(spec.mu[a], spec.sigma[a]) : spec.mu[a];
  b.weight = spec.energy_mev;
  return b;
}

inline Direction isotropic_direction(RngStream& rng) {
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  return {std::cos(phi), std::sin(phi)};
}

/// Per-cell weighted track-length scores for one batch.
struct TallyAccumulator {
  explicit TallyAccumulator(const TallyGrid& g) : grid(&g), score(g.cells(), 0.0) {}

  const TallyGrid* grid;
  std::vector<double> score;
  double path_length = 0.0;     // unweighted length flown inside the domain
  double tallied_length = 0.0;  // unweighted length deposited into the grid
  std::uint64_t segments = 0;
  std::uint64_t capped_histories = 0;

  void add_segment(double x0, double y0, double x1, double y1, double weight) {
    path_length += std::hypot(x1 - x0, y1 - y0);
    ++segments;
    traverse_segment(*grid, x0, y0, x1, y1, [&](std::size_t cell, double len) {
      score[cell] += weight * len;
      tallied_length += len;
    });
  }
};

/// Follows one particle from birth to absorption, domain exit, or the
/// segment cap, depositing weight * length into every tally cell crossed.
inline void transport_history(const MazeGeometry& geo, const MaterialTable& mats, const Birth& birth,
                              Direction dir, RngStream& rng, TallyAccumulator& tally) {
  double x = birth.position[0];
  double y = birth.position[1];
  std::size_t ix, iy;
  if (!geo.locate(x, y, ix, iy)) return;

  const auto& xe = geo.x_edges();
  const auto& ye = geo.y_edges();
  const std::size_t nx = geo.nx();
  const std::size_t ny = geo.ny();
  constexpr double inf = std::numeric_limits<double>::infinity();

  for (std::size_t seg = 0;; ++seg) {
    if (seg == kMaxSegmentsPerHistory) {
      ++tally.capped_histories;
      return;
    }
    const MaterialXS& xs = mats[geo.cell_material(ix, iy)];
    const double dbx = dir.ux > 0.0 ? (xe[ix + 1] - x) / dir.ux : dir.ux < 0.0 ? (xe[ix] - x) / dir.ux : inf;
    const double dby = dir.uy > 0.0 ? (ye[iy + 1] - y) / dir.uy : dir.uy < 0.0 ? (ye[iy] - y) / dir.uy : inf;
    const double to_boundary = std::max(0.0, std::min(dbx, dby));
    const double to_collision = rng.exponential(xs.sigma_total);

    if (to_collision < to_boundary) {
      const double nxp = x + dir.ux * to_collision;
      const double nyp = y + dir.uy * to_collision;
      tally.add_segment(x, y, nxp, nyp, birth.weight);
      x = nxp;
      y = nyp;
      if (rng.uniform() >= xs.scatter_prob) return;  // absorbed
      dir = isotropic_direction(rng);
      continue;
    }

    double nxp, nyp;
    if (dbx <= dby) {
      nxp = dir.ux > 0.0 ? xe[ix + 1] : xe[ix];
      nyp = y + dir.uy * to_boundary;
    } else {
      nxp = x + dir.ux * to_boundary;
      nyp = dir.uy > 0.0 ? ye[iy + 1] : ye[iy];
    }
    tally.add_segment(x, y, nxp, nyp, birth.weight);
    x = nxp;
    y = nyp;
    if (dbx <= dby) {
      if (dir.ux > 0.0) {
        if (++ix == nx) return;
      } else {
        if (ix-- == 0) return;
      }
    } else {
      if (dir.uy > 0.0) {
        if (++iy == ny) return;
      } else {
        if (iy-- == 0) return;
      }
    }
  }
}

inline void transport_history(const MazeGeometry& geo, const MaterialTable& mats, const Birth& birth,
                              RngStream& rng, TallyAccumulator& tally) {
  transport_history(geo, mats, birth, isotropic_direction(rng), rng, tally);
}

/// Batch-mean track-length flux. Batch b draws from substream b of
/// plan.seed, so the result does not depend on `threads`.
inline FluxField simulate_flux(const MazeGeometry& geo, const MaterialTable& mats, const SourceSpec& spec,
                               const TallyGrid& grid, const RunPlan& plan, unsigned threads = 1) {
  plan.validate();
  grid.validate();
  mats.validate();

  const std::size_t cells = grid.cells();
  const std::size_t batches = plan.batches;
  const double scale =
      grid.normalization / (static_cast<double>(plan.particles_per_batch) * grid.cell_area());
  const RngStream root(plan.seed);

  std::vector<double> batch_means(batches * cells);
  std::vector<std::uint64_t> capped(batches, 0);
  parallel_for(batches, threads, [&](std::size_t b) {
    RngStream rng = root.substream(b);
    TallyAccumulator acc(grid);
    for (std::size_t p = 0; p < plan.particles_per_batch; ++p) {
      const Birth birth = sample_birth(spec, rng);
      transport_history(geo, mats, birth, rng, acc);
    }
    for (std::size_t c = 0; c < cells; ++c) batch_means[b * cells + c] = scale * acc.score[c];
    capped[b] = acc.capped_histories;
  });

  FluxField f;
  f.grid = grid;
  f.spec_id = spec.id;
  f.seed = plan.seed;
  f.values.assign(cells, 0.0);
  f.rel_error.assign(cells, 1.0);
  for (std::size_t b = 0; b < batches; ++b) {
    f.capped_histories += capped[b];
    for (std::size_t c = 0; c < cells; ++c) f.values[c] += batch_means[b * cells + c];
  }
  const double nb = static_cast<double>(batches);
  for (std::size_t c = 0; c < cells; ++c) f.values[c] /= nb;
  if (batches > 1) {
    for (std::size_t c = 0; c < cells; ++c) {
      const double mean = f.values[c];
      if (mean <= 0.0) continue;
      double ss = 0.0;
      for (std::size_t b = 0; b < batches; ++b) {
        const double d = batch_means[b * cells + c] - mean;
        ss += d * d;
      }
      f.rel_error[c] = std::sqrt(ss / (nb - 1.0)) / (mean * std::sqrt(nb));
    }
  }
  return f;
}

/// Wall-clock seconds for one simulate_flux call.
inline double timing_probe(const RunPlan& plan, const MazeGeometry& geo, const MaterialTable& mats,
                           const SourceSpec& spec, const TallyGrid& grid, unsigned threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const FluxField f = simulate_flux(geo, mats, spec, grid, plan, threads);
  const auto t1 = std::chrono::steady_clock::now();
  volatile double sink = f.values.empty() ? 0.0 : f.values.front();
  (void)sink;
  return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace fluxop
