#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fluxop/models.hpp"
#include "fluxop/nn.hpp"
#include "fluxop/rng.hpp"

namespace fluxop {

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
  std::size_t probes_per_target = 50;
  std::uint64_t seed = 0;
};

struct GradProbe {
  std::string target;
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradProbe> probes;
  std::size_t failures = 0;
  double max_rel_error = 0.0;

  bool passed() const { return failures == 0 && !probes.empty(); }

  void merge(const GradCheckReport& o) {
    probes.insert(probes.end(), o.probes.begin(), o.probes.end());
    failures += o.failures;
    max_rel_error = std::max(max_rel_error, o.max_rel_error);
  }
};

inline double gradcheck_rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

/// Central differences on randomly chosen entries of `params`. A tensor is
/// drawn uniformly first so that small bias vectors are covered too.
inline GradCheckReport probe_gradients(const std::string& target, std::span<const std::span<double>> params,
                                       std::span<const std::span<const double>> grads,
                                       const std::function<double()>& loss, const GradCheckOptions& opt,
                                       RngStream& rng) {
  if (params.size() != grads.size() || params.empty()) throw ShapeError("gradcheck: tensor count mismatch");
  GradCheckReport r;
  for (std::size_t p = 0; p < opt.probes_per_target; ++p) {
    const std::size_t t = static_cast<std::size_t>(rng.below(params.size()));
    if (params[t].empty()) continue;
    const std::size_t i = static_cast<std::size_t>(rng.below(params[t].size()));
    double& x = params[t][i];
    const double saved = x;
    x = saved + opt.h;
    const double up = loss();
    x = saved - opt.h;
    const double down = loss();
    x = saved;
    GradProbe g{target, t, i, grads[t][i], (up - down) / (2.0 * opt.h), 0.0};
    g.rel_error = gradcheck_rel_error(g.analytic, g.numeric, opt.floor);
    if (!(g.rel_error <= opt.tolerance)) ++r.failures;
    r.max_rel_error = std::max(r.max_rel_error, g.rel_error);
    r.probes.push_back(g);
  }
  return r;
}

namespace detail {

inline OperatorBatch random_batch(std::size_t functions, std::size_t points, std::size_t sensors, RngStream& rng) {
  OperatorBatch b;
  b.branch.resize(static_cast<Eigen::Index>(functions), static_cast<Eigen::Index>(sensors));
  for (Eigen::Index i = 0; i < b.branch.size(); ++i) b.branch.data()[i] = rng.normal();
  b.trunk.resize(static_cast<Eigen::Index>(functions * points), 2);
  for (Eigen::Index i = 0; i < b.trunk.size(); ++i) b.trunk.data()[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t f = 0; f < functions; ++f) {
    for (std::size_t i = 0; i < points; ++i) b.target.push_back(rng.normal());
    b.offsets.push_back(b.target.size());
  }
  return b;
}

template <class Spans>
std::vector<std::span<double>> slice(const Spans& all, std::size_t first, std::size_t count) {
  return {all.begin() + static_cast<std::ptrdiff_t>(first), all.begin() + static_cast<std::ptrdiff_t>(first + count)};
}

template <class Spans>
std::vector<std::span<const double>> slice_const(const Spans& all, std::size_t first, std::size_t count) {
  return {all.begin() + static_cast<std::ptrdiff_t>(first), all.begin() + static_cast<std::ptrdiff_t>(first + count)};
}

}  // namespace detail

/// Branch-only, trunk-only and composite (all parameters including the
/// output bias) probes of the relative-L2 DeepONet loss.
inline GradCheckReport gradcheck_deeponet(DeepONetModel& m, const OperatorBatch& batch, const GradCheckOptions& opt,
                                          RngStream& rng) {
  DeepONetGradient g;
  deeponet_loss(m, batch, &g);
  const auto params = m.tensors();
  const auto grads = g.tensors();
  const std::size_t nb = m.branch.layers.size() * 2;
  const std::size_t nt = m.trunk.layers.size() * 2;
  const auto loss = [&] { return deeponet_loss(m, batch); };
  GradCheckReport r;
  r.merge(probe_gradients("branch", detail::slice(params, 0, nb), detail::slice_const(grads, 0, nb), loss, opt, rng));
  r.merge(probe_gradients("trunk", detail::slice(params, nb, nt), detail::slice_const(grads, nb, nt), loss, opt, rng));
  r.merge(probe_gradients("composite", params, grads, loss, opt, rng));
  return r;
}

inline GradCheckReport gradcheck_fcn(FcnBaseline& f, const OperatorBatch& batch, const GradCheckOptions& opt,
                                     RngStream& rng) {
  GradientBundle g;
  fcn_loss(f, batch.trunk, batch.target, &g);
  const auto loss = [&] { return fcn_loss(f, batch.trunk, batch.target); };
  return probe_gradients("fcn", f.tensors(), g.tensors(), loss, opt, rng);
}

inline GradCheckReport gradcheck_cnn(CnnBaseline& c, const OperatorBatch& batch, const GradCheckOptions& opt,
                                     RngStream& rng) {
  CnnGradient g;
  cnn_loss(c, batch, &g);
  const auto loss = [&] { return cnn_loss(c, batch); };
  return probe_gradients("cnn", c.tensors(), g.tensors(), loss, opt, rng);
}

/// Full suite on freshly initialized models of the default architectures
/// with random inputs; 5 targets x probes_per_target probes.
inline GradCheckReport run_gradcheck(const GradCheckOptions& opt = {}, std::size_t sensors = 190) {
  const RngStream root(opt.seed);
  RngStream init = root.substream(1);
  RngStream data = root.substream(2);
  RngStream probes = root.substream(3);
  NormalizationMeta norm;
  norm.fitted = true;

  GradCheckReport r;
  {
    DeepONetModel m = make_deeponet(sensors, norm, init);
    // Nonzero biases so that their gradients are exercised away from init.
    for (auto t : m.tensors())
      if (t.size() <= 80)
        for (double& v : t) v = 0.1 * data.normal();
    r.merge(gradcheck_deeponet(m, detail::random_batch(4, 24, sensors, data), opt, probes));
  }
  {
    FcnBaseline f = make_fcn(norm, init);
    r.merge(gradcheck_fcn(f, detail::random_batch(1, 64, sensors, data), opt, probes));
  }
  {
    CnnBaseline c = make_cnn(sensors, norm, init);
    for (auto t : c.tensors())
      if (t.size() <= 64)
        for (double& v : t) v = 0.1 * data.normal();
    r.merge(gradcheck_cnn(c, detail::random_batch(3, 16, sensors, data), opt, probes));
  }
  return r;
}

}  // namespace fluxop
