#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "fluxop/error.hpp"

namespace fluxop {

/// Uniform 2D mesh for the track-length tally.
struct TallyGrid {
  std::size_t nx = 80;
  std::size_t ny = 80;
  double x_lo = -12.0, x_hi = 52.0;
  double y_lo = -12.0, y_hi = 52.0;
  double normalization = 1000.0;

  double dx() const { return (x_hi - x_lo) / static_cast<double>(nx); }
  double dy() const { return (y_hi - y_lo) / static_cast<double>(ny); }
  double cell_area() const { return dx() * dy(); }
  std::size_t cells() const { return nx * ny; }

  double center_x(std::size_t ix) const { return x_lo + (static_cast<double>(ix) + 0.5) * dx(); }
  double center_y(std::size_t iy) const { return y_lo + (static_cast<double>(iy) + 0.5) * dy(); }

  /// Row-major: rows are y, columns are x.
  std::size_t index(std::size_t ix, std::size_t iy) const { return iy * nx + ix; }

  void validate() const {
    if (nx == 0 || ny == 0) throw ConfigError("tally grid: nx and ny must be positive");
    if (!(x_hi > x_lo && y_hi > y_lo)) throw ConfigError("tally grid: empty extent");
    if (!(normalization > 0.0)) throw ConfigError("tally grid: normalization must be positive");
  }

  bool operator==(const TallyGrid&) const = default;
};

/// Tallied flux on a TallyGrid with per-cell relative errors.
struct FluxField {
  TallyGrid grid;
  std::vector<double> values;
  std::vector<double> rel_error;
  std::uint64_t spec_id = 0;
  std::uint64_t seed = 0;
  std::uint64_t capped_histories = 0;

  double at(std::size_t ix, std::size_t iy) const { return values[grid.index(ix, iy)]; }

  bool operator==(const FluxField&) const = default;
};

namespace detail {

inline long entry_cell(double v, double lo, double width, std::size_t n, double direction) {
  const double f = (v - lo) / width;
  long i = static_cast<long>(std::floor(f));
  if (direction < 0.0 && f == static_cast<double>(i)) --i;
  return std::clamp<long>(i, 0, static_cast<long>(n) - 1);
}

}  // namespace detail

/// Walks the segment (x0, y0) -> (x1, y1) through the grid cells it crosses
/// and calls deposit(cell_index, chord_length) once per cell, in order.
/// Parts of the segment outside the grid extents are ignored.
template <class Deposit>
void traverse_segment(const TallyGrid& g, double x0, double y0, double x1, double y1, Deposit&& deposit) {
  const double ddx = x1 - x0;
  const double ddy = y1 - y0;

  // Liang-Barsky clip to the grid box.
  double t0 = 0.0, t1 = 1.0;
  auto clip = [&](double p, double q) {
    if (p == 0.0) return q >= 0.0;
    const double r = q / p;
    if (p < 0.0) {
      if (r > t1) return false;
      t0 = std::max(t0, r);
    } else {
      if (r < t0) return false;
      t1 = std::min(t1, r);
    }
    return true;
  };
  if (!clip(-ddx, x0 - g.x_lo) || !clip(ddx, g.x_hi - x0) || !clip(-ddy, y0 - g.y_lo) ||
      !clip(ddy, g.y_hi - y0))
    return;
  if (!(t1 > t0)) return;

  const double length = std::hypot(ddx, ddy);
  const double cw = g.dx();
  const double ch = g.dy();
  long ix = detail::entry_cell(x0 + t0 * ddx, g.x_lo, cw, g.nx, ddx);
  long iy = detail::entry_cell(y0 + t0 * ddy, g.y_lo, ch, g.ny, ddy);
  const long step_x = ddx > 0.0 ? 1 : -1;
  const long step_y = ddy > 0.0 ? 1 : -1;
  constexpr double inf = std::numeric_limits<double>::infinity();

  auto next_x = [&] {
    if (ddx == 0.0) return inf;
    const double edge = g.x_lo + static_cast<double>(ddx > 0.0 ? ix + 1 : ix) * cw;
    return (edge - x0) / ddx;
  };
  auto next_y = [&] {
    if (ddy == 0.0) return inf;
    const double edge = g.y_lo + static_cast<double>(ddy > 0.0 ? iy + 1 : iy) * ch;
    return (edge - y0) / ddy;
  };

  double t = t0;
  double tx = next_x();
  double ty = next_y();
  for (;;) {
    const double tn = std::min({tx, ty, t1});
    if (tn > t) {
      deposit(static_cast<std::size_t>(iy) * g.nx + static_cast<std::size_t>(ix), (tn - t) * length);
      t = tn;
    }
    if (tn >= t1) break;
    if (tx <= ty) {
      ix += step_x;
      if (ix < 0 || ix >= static_cast<long>(g.nx)) break;
      tx = next_x();
    } else {
      iy += step_y;
      if (iy < 0 || iy >= static_cast<long>(g.ny)) break;
      ty = next_y();
    }
  }
}

}  // namespace fluxop
