#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fluxop/error.hpp"

namespace fluxop {

/// Mean over groups of ||pred_g - true_g||_2 / ||true_g||_2. Groups are
/// contiguous ranges [offsets[g], offsets[g + 1]). If `grad` is non-empty it
/// receives d(loss)/d(pred).
inline double mean_l2_relative_error(std::span<const double> pred, std::span<const double> truth,
                                     std::span<const std::size_t> offsets, std::span<double> grad = {}) {
  if (pred.size() != truth.size()) throw ShapeError("mean_l2_relative_error: length mismatch");
  if (offsets.size() < 2 || offsets.back() != pred.size())
    throw ShapeError("mean_l2_relative_error: offsets do not cover the data");
  if (!grad.empty() && grad.size() != pred.size()) throw ShapeError("mean_l2_relative_error: grad length mismatch");
  const std::size_t groups = offsets.size() - 1;
  double total = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    double rr = 0.0, tt = 0.0;
    for (std::size_t i = offsets[g]; i < offsets[g + 1]; ++i) {
      const double r = pred[i] - truth[i];
      rr += r * r;
      tt += truth[i] * truth[i];
    }
    if (!(tt > 0.0)) throw MetricError("mean_l2_relative_error: group " + std::to_string(g) + " has zero-norm truth");
    const double rn = std::sqrt(rr);
    const double tn = std::sqrt(tt);
    total += rn / tn;
    if (!grad.empty()) {
      const double scale = rn > 0.0 ? 1.0 / (static_cast<double>(groups) * rn * tn) : 0.0;
      for (std::size_t i = offsets[g]; i < offsets[g + 1]; ++i) grad[i] = scale * (pred[i] - truth[i]);
    }
  }
  return total / static_cast<double>(groups);
}

/// Convenience form over explicit groups.
inline double mean_l2_relative_error(const std::vector<std::vector<double>>& pred,
                                     const std::vector<std::vector<double>>& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw ShapeError("mean_l2_relative_error: group count mismatch");
  std::vector<double> p, t;
  std::vector<std::size_t> offsets{0};
  for (std::size_t g = 0; g < pred.size(); ++g) {
    if (pred[g].size() != truth[g].size()) throw ShapeError("mean_l2_relative_error: group length mismatch");
    p.insert(p.end(), pred[g].begin(), pred[g].end());
    t.insert(t.end(), truth[g].begin(), truth[g].end());
    offsets.push_back(p.size());
  }
  return mean_l2_relative_error(p, t, offsets);
}

/// Mean squared error with optional gradient.
inline double mean_squared_error(std::span<const double> pred, std::span<const double> truth,
                                 std::span<double> grad = {}) {
  if (pred.size() != truth.size() || pred.empty()) throw ShapeError("mean_squared_error: length mismatch");
  if (!grad.empty() && grad.size() != pred.size()) throw ShapeError("mean_squared_error: grad length mismatch");
  const double n = static_cast<double>(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - truth[i];
    s += r * r;
    if (!grad.empty()) grad[i] = 2.0 * r / n;
  }
  return s / n;
}

}  // namespace fluxop
