#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fluxop/error.hpp"

namespace fluxop {

enum class Material : std::uint8_t { air = 0, concrete = 1, exterior = 2 };

inline std::string_view to_string(Material m) {
  switch (m) {
    case Material::air: return "air";
    case Material::concrete: return "concrete";
    case Material::exterior: return "exterior";
  }
  return "unknown";
}

inline Material material_from_string(std::string_view s) {
  if (s == "air") return Material::air;
  if (s == "concrete") return Material::concrete;
  if (s == "exterior" || s == "void") return Material::exterior;
  throw ConfigError("unknown material '" + std::string(s) + "'");
}

/// One-group macroscopic data. sigma_scatter = scatter_prob * sigma_total;
/// the remainder of sigma_total is absorption.
struct MaterialXS {
  double sigma_total = 0.0;
  double scatter_prob = 0.0;

  void validate() const {
    if (!(sigma_total >= 0.0)) throw ConfigError("material: sigma_total must be >= 0");
    if (!(scatter_prob >= 0.0 && scatter_prob <= 1.0))
      throw ConfigError("material: scatter_prob must lie in [0, 1]");
  }
};

struct MaterialTable {
  MaterialXS air{1e-4, 0.99};
  MaterialXS concrete{0.4, 0.9};

  const MaterialXS& operator[](Material m) const {
    static const MaterialXS vacuum{};
    switch (m) {
      case Material::air: return air;
      case Material::concrete: return concrete;
      case Material::exterior: return vacuum;
    }
    return vacuum;
  }

  void validate() const {
    air.validate();
    concrete.validate();
  }

  static MaterialTable vacuum() { return {{0.0, 0.0}, {0.0, 0.0}}; }
};

struct Rect {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;

  double area() const { return (x1 - x0) * (y1 - y0); }
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const Rect&) const = default;
};

struct WallSpec {
  Rect box;
  Material material = Material::concrete;
};

/// Axis-aligned wall rectangles over a rectangular domain filled with a
/// background material. The default layout is a serpentine maze: 3 cm outer
/// walls, an entry corridor containing the source line at x = 0, and two
/// 3 cm baffles with alternating gaps.
struct MazeConfig {
  Rect domain{-12.0, 52.0, -12.0, 52.0};
  Material background = Material::air;
  std::vector<WallSpec> walls;

  static MazeConfig standard() {
    MazeConfig c;
    const Material k = Material::concrete;
    c.walls = {
        {{-12.0, 52.0, -12.0, -9.0}, k},  // bottom
        {{-12.0, 52.0, 49.0, 52.0}, k},   // top
        {{-12.0, -9.0, -9.0, 49.0}, k},   // left
        {{49.0, 52.0, -9.0, 49.0}, k},    // right
        {{8.0, 11.0, -9.0, 34.0}, k},     // first baffle, gap at the top
        {{26.0, 29.0, 6.0, 49.0}, k},     // second baffle, gap at the bottom
    };
    return c;
  }
};

/// Region map on a compressed rectilinear grid whose lines are the union of
/// all wall edges. Every point of the domain falls in exactly one cell, so
/// the map tiles the domain without gaps or overlaps.
class MazeGeometry {
 public:
  MazeGeometry() = default;

  const Rect& domain() const { return domain_; }
  const std::vector<double>& x_edges() const { return xs_; }
  const std::vector<double>& y_edges() const { return ys_; }
  std::size_t nx() const { return xs_.size() - 1; }
  std::size_t ny() const { return ys_.size() - 1; }

  Material cell_material(std::size_t ix, std::size_t iy) const { return cells_[iy * nx() + ix]; }

  /// Cell containing (x, y); cells are half-open [lo, hi) except at the
  /// upper domain edge. Returns false outside the domain.
  bool locate(double x, double y, std::size_t& ix, std::size_t& iy) const {
    if (!(x >= domain_.x0 && x <= domain_.x1 && y >= domain_.y0 && y <= domain_.y1)) return false;
    ix = locate_axis(xs_, x);
    iy = locate_axis(ys_, y);
    return true;
  }

  Material material_at(double x, double y) const {
    std::size_t ix, iy;
    if (!locate(x, y, ix, iy)) return Material::exterior;
    return cell_material(ix, iy);
  }

  double area_of(Material m) const {
    double a = 0.0;
    for (std::size_t iy = 0; iy < ny(); ++iy)
      for (std::size_t ix = 0; ix < nx(); ++ix)
        if (cell_material(ix, iy) == m) a += (xs_[ix + 1] - xs_[ix]) * (ys_[iy + 1] - ys_[iy]);
    return a;
  }

  double total_area() const {
    double a = 0.0;
    for (std::size_t iy = 0; iy < ny(); ++iy)
      for (std::size_t ix = 0; ix < nx(); ++ix) a += (xs_[ix + 1] - xs_[ix]) * (ys_[iy + 1] - ys_[iy]);
    return a;
  }

  friend MazeGeometry build_maze(const MazeConfig& config);

 private:
  static std::size_t locate_axis(const std::vector<double>& edges, double v) {
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::size_t i = static_cast<std::size_t>(it - edges.begin());
    i = i == 0 ? 0 : i - 1;
    return std::min(i, edges.size() - 2);
  }

  Rect domain_;
  std::vector<double> xs_, ys_;
  std::vector<Material> cells_;
};

inline MazeGeometry build_maze(const MazeConfig& config) {
  const Rect& d = config.domain;
  if (!(d.x1 > d.x0 && d.y1 > d.y0)) throw ConfigError("maze: domain must have positive extent");

  MazeGeometry g;
  g.domain_ = d;
  g.xs_ = {d.x0, d.x1};
  g.ys_ = {d.y0, d.y1};
  for (const auto& w : config.walls) {
    const Rect& r = w.box;
    if (!(r.x1 > r.x0 && r.y1 > r.y0)) throw ConfigError("maze: wall with empty extent");
    if (r.x0 < d.x0 || r.x1 > d.x1 || r.y0 < d.y0 || r.y1 > d.y1)
      throw ConfigError("maze: wall extends outside the domain");
    g.xs_.push_back(r.x0);
    g.xs_.push_back(r.x1);
    g.ys_.push_back(r.y0);
    g.ys_.push_back(r.y1);
  }
  for (auto* e : {&g.xs_, &g.ys_}) {
    std::sort(e->begin(), e->end());
    e->erase(std::unique(e->begin(), e->end()), e->end());
  }

  g.cells_.assign(g.nx() * g.ny(), config.background);
  std::vector<std::uint8_t> claimed(g.cells_.size(), 0);
  for (std::size_t iy = 0; iy < g.ny(); ++iy) {
    const double cy = 0.5 * (g.ys_[iy] + g.ys_[iy + 1]);
    for (std::size_t ix = 0; ix < g.nx(); ++ix) {
      const double cx = 0.5 * (g.xs_[ix] + g.xs_[ix + 1]);
      const std::size_t c = iy * g.nx() + ix;
      for (const auto& w : config.walls) {
        if (!w.box.contains(cx, cy)) continue;
        if (claimed[c] && g.cells_[c] != w.material)
          throw ConfigError("maze: overlapping walls assign different materials");
        g.cells_[c] = w.material;
        claimed[c] = 1;
      }
    }
  }
  return g;
}

}  // namespace fluxop
