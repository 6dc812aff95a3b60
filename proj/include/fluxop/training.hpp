#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "fluxop/dataset.hpp"
#include "fluxop/error.hpp"
#include "fluxop/models.hpp"
#include "fluxop/nn.hpp"
#include "fluxop/rng.hpp"

namespace fluxop {

struct TrainConfig {
  std::size_t iterations = 10000;
  double lr = 1e-3;
  /// If positive, the step size decays geometrically from lr to final_lr
  /// over the run; 0 keeps it constant.
  double final_lr = 0.0;
  std::size_t batch_functions = 16;
  std::size_t points_per_function = 256;
  std::uint64_t seed = 0;
  /// Loss is averaged over windows of this many iterations for the log.
  std::size_t log_every = 100;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
    if (!(final_lr >= 0.0)) throw ConfigError("train config: final_lr must be non-negative");
    if (batch_functions == 0 || points_per_function == 0 || log_every == 0)
      throw ConfigError("train config: batch sizes and log interval must be positive");
  }
};

/// (iteration, mean loss over the window ending at that iteration).
struct TrainingLog {
  std::vector<std::pair<std::size_t, double>> losses;
};

template <class Model>
struct Trained {
  Model model;
  AdamState optimizer;
  TrainingLog log;
};

namespace detail {

/// Normalized copy of a sample set for fast batch assembly.
struct PreparedFunction {
  Matrix branch;  // 1 x m
  Matrix points;  // n x 2
  std::vector<double> targets;
};

inline std::vector<PreparedFunction> prepare(const OperatorSampleSet& set) {
  std::vector<PreparedFunction> out;
  out.reserve(set.functions.size());
  for (const auto& f : set.functions) {
    PreparedFunction p;
    p.branch = normalized_branch_row(set.norm, f.branch_input);
    p.points = normalized_points(set.norm, f.points);
    p.targets = f.targets;
    out.push_back(std::move(p));
  }
  return out;
}

/// Function-major batch sampler: functions are visited in per-epoch random
/// order, points drawn without replacement within each function.
class BatchSampler {
 public:
  BatchSampler(const std::vector<PreparedFunction>& data, const TrainConfig& cfg, RngStream rng)
      : data_(data), cfg_(cfg), rng_(rng), order_(data.size()) {
    std::iota(order_.begin(), order_.end(), 0);
    cursor_ = order_.size();
  }

  OperatorBatch next() {
    const std::size_t nf = std::min(cfg_.batch_functions, data_.size());
    OperatorBatch b;
    b.branch.resize(static_cast<Eigen::Index>(nf), data_.front().branch.cols());
    std::vector<std::size_t> chosen(nf);
    std::size_t total = 0;
    for (std::size_t k = 0; k < nf; ++k) {
      if (cursor_ == order_.size()) reshuffle();
      chosen[k] = order_[cursor_++];
      total += std::min(cfg_.points_per_function, data_[chosen[k]].targets.size());
    }
    b.trunk.resize(static_cast<Eigen::Index>(total), 2);
    b.target.reserve(total);
    for (std::size_t k = 0; k < nf; ++k) {
      const PreparedFunction& f = data_[chosen[k]];
      b.branch.row(static_cast<Eigen::Index>(k)) = f.branch.row(0);
      const std::size_t n = f.targets.size();
      const std::size_t take = std::min(cfg_.points_per_function, n);
      pool_.resize(n);
      std::iota(pool_.begin(), pool_.end(), 0);
      if (take < n)
        for (std::size_t i = 0; i < take; ++i) std::swap(pool_[i], pool_[i + rng_.below(n - i)]);
      for (std::size_t i = 0; i < take; ++i) {
        const auto r = static_cast<Eigen::Index>(b.target.size());
        b.trunk.row(r) = f.points.row(static_cast<Eigen::Index>(pool_[i]));
        b.target.push_back(f.targets[pool_[i]]);
      }
      b.offsets.push_back(b.target.size());
    }
    return b;
  }

 private:
  void reshuffle() {
    for (std::size_t i = order_.size() - 1; i > 0; --i) std::swap(order_[i], order_[rng_.below(i + 1)]);
    cursor_ = 0;
  }

  const std::vector<PreparedFunction>& data_;
  const TrainConfig& cfg_;
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> pool_;
  std::size_t cursor_ = 0;
};

class LossWindow {
 public:
  explicit LossWindow(std::size_t every) : every_(every) {}

  void add(std::size_t iteration, double loss, TrainingLog& log) {
    sum_ += loss;
    ++count_;
    if (count_ == every_) flush(iteration, log);
  }

  void flush(std::size_t iteration, TrainingLog& log) {
    if (count_ == 0) return;
    log.losses.emplace_back(iteration, sum_ / static_cast<double>(count_));
    sum_ = 0.0;
    count_ = 0;
  }

 private:
  std::size_t every_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

/// Step size for iteration `it` (1-based).
inline double scheduled_lr(const TrainConfig& cfg, std::size_t it) {
  if (cfg.final_lr <= 0.0 || cfg.iterations < 2) return cfg.lr;
  const double frac = static_cast<double>(it - 1) / static_cast<double>(cfg.iterations - 1);
  return cfg.lr * std::pow(cfg.final_lr / cfg.lr, frac);
}

inline void check_loss(double loss, std::size_t iteration) {
  if (!std::isfinite(loss)) throw TrainingError("training diverged: non-finite loss", iteration);
}

// Substream ids under the training seed.
inline constexpr std::uint64_t kInitStream = 11;
inline constexpr std::uint64_t kBatchStream = 12;

}  // namespace detail

/// Adam on the mean L2 relative error, function-major mini-batches.
inline Trained<DeepONetModel> train_deeponet(const OperatorSampleSet& data, const TrainConfig& cfg,
                                             const DeepONetArch& arch = {}) {
  cfg.validate();
  if (data.functions.empty()) throw ConfigError("train_deeponet: no training functions");
  const RngStream root(cfg.seed);
  RngStream init = root.substream(detail::kInitStream);
  Trained<DeepONetModel> t;
  t.model = make_deeponet(data.functions.front().branch_input.size(), data.norm, init, arch);
  t.optimizer = make_adam_state(t.model.tensors(), AdamConfig{cfg.lr});

  const auto prepared = detail::prepare(data);
  detail::BatchSampler sampler(prepared, cfg, root.substream(detail::kBatchStream));
  detail::LossWindow window(cfg.log_every);
  DeepONetGradient grad;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    t.optimizer.config.lr = detail::scheduled_lr(cfg, it);
    const OperatorBatch batch = sampler.next();
    const double loss = deeponet_loss(t.model, batch, &grad);
    detail::check_loss(loss, it);
    const auto pt = t.model.tensors();
    const auto gt = grad.tensors();
    adam_update(pt, gt, t.optimizer);
    t.model.bump_revision();
    window.add(it, loss, t.log);
  }
  window.flush(cfg.iterations, t.log);
  return t;
}

/// Coordinate regression on exactly one function, mean squared error.
inline Trained<FcnBaseline> train_fcn(const OperatorSampleSet& data, const TrainConfig& cfg,
                                      const std::vector<std::size_t>& hidden = {64, 64, 64}) {
  cfg.validate();
  if (data.functions.size() != 1)
    throw ProtocolError("train_fcn: expected samples of exactly one source function, got " +
                        std::to_string(data.functions.size()));
  const RngStream root(cfg.seed);
  RngStream init = root.substream(detail::kInitStream);
  Trained<FcnBaseline> t;
  t.model = make_fcn(data.norm, init, hidden);
  t.model.spec_id = data.functions.front().spec_id;
  t.optimizer = make_adam_state(t.model.tensors(), AdamConfig{cfg.lr});

  const auto prepared = detail::prepare(data);
  TrainConfig point_cfg = cfg;
  point_cfg.batch_functions = 1;
  point_cfg.points_per_function = cfg.batch_functions * cfg.points_per_function;
  detail::BatchSampler sampler(prepared, point_cfg, root.substream(detail::kBatchStream));
  detail::LossWindow window(cfg.log_every);
  GradientBundle grad;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    t.optimizer.config.lr = detail::scheduled_lr(cfg, it);
    const OperatorBatch batch = sampler.next();
    const double loss = fcn_loss(t.model, batch.trunk, batch.target, &grad);
    detail::check_loss(loss, it);
    adam_step(t.model.net, grad, t.optimizer);
    window.add(it, loss, t.log);
  }
  window.flush(cfg.iterations, t.log);
  return t;
}

/// Sensor-vector CNN on one or many functions, mean squared error.
inline Trained<CnnBaseline> train_cnn(const OperatorSampleSet& data, const TrainConfig& cfg, const CnnArch& arch = {}) {
  cfg.validate();
  if (data.functions.empty()) throw ConfigError("train_cnn: no training functions");
  const RngStream root(cfg.seed);
  RngStream init = root.substream(detail::kInitStream);
  Trained<CnnBaseline> t;
  t.model = make_cnn(data.functions.front().branch_input.size(), data.norm, init, arch);
  t.optimizer = make_adam_state(t.model.tensors(), AdamConfig{cfg.lr});

  const auto prepared = detail::prepare(data);
  TrainConfig batch_cfg = cfg;
  if (data.functions.size() == 1) {
    batch_cfg.batch_functions = 1;
    batch_cfg.points_per_function = cfg.batch_functions * cfg.points_per_function;
  }
  detail::BatchSampler sampler(prepared, batch_cfg, root.substream(detail::kBatchStream));
  detail::LossWindow window(cfg.log_every);
  CnnGradient grad;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    t.optimizer.config.lr = detail::scheduled_lr(cfg, it);
    const OperatorBatch batch = sampler.next();
    const double loss = cnn_loss(t.model, batch, &grad);
    detail::check_loss(loss, it);
    const auto pt = t.model.tensors();
    const auto gt = grad.tensors();
    adam_update(pt, gt, t.optimizer);
    t.model.bump_revision();
    window.add(it, loss, t.log);
  }
  window.flush(cfg.iterations, t.log);
  return t;
}

/// Loss of a model over every sample of a set, one group per function.
inline double evaluate_loss(const DeepONetModel& m, const OperatorSampleSet& data) {
  const auto prepared = detail::prepare(data);
  TrainConfig all;
  all.batch_functions = prepared.size();
  all.points_per_function = static_cast<std::size_t>(-1);
  detail::BatchSampler sampler(prepared, all, RngStream(0));
  return deeponet_loss(m, sampler.next());
}

}  // namespace fluxop
