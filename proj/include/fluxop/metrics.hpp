#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "fluxop/error.hpp"

namespace fluxop {

enum class MetricScope { per_function, aggregate };

/// Regression metrics for one function or a pooled set of points.
/// rmse_mae_ratio is empty when MAE is zero.
struct MetricsReport {
  double r2 = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> rmse_mae_ratio;
  std::size_t n_points = 0;
  MetricScope scope = MetricScope::per_function;
};

/// R^2 = 1 - SS_res / SS_tot with SS_tot about the mean of `truth`.
/// Kept out of line: g++ 11 at -O3 with AVX2 dropped the ratio's engaged
/// flag when this was inlined after other vectorized loops.
[[gnu::noinline]] inline MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> truth,
                                                        MetricScope scope = MetricScope::per_function) {
  if (pred.size() != truth.size()) throw MetricError("compute_metrics: length mismatch");
  if (truth.size() < 2) throw MetricError("compute_metrics: need at least two points");
  const double n = static_cast<double>(truth.size());
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= n;
  double ss_tot = 0.0, ss_res = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth[i] - mean;
    const double r = pred[i] - truth[i];
    ss_tot += d * d;
    ss_res += r * r;
    abs_sum += std::abs(r);
  }
  if (!(ss_tot > 0.0)) throw MetricError("compute_metrics: truth is constant, R^2 undefined");
  const double rmse = std::sqrt(ss_res / n);
  const double mae = abs_sum / n;
  return MetricsReport{1.0 - ss_res / ss_tot, rmse, mae,
                       mae > 0.0 ? std::optional<double>(rmse / mae) : std::nullopt, truth.size(), scope};
}

}  // namespace fluxop
