#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fluxop/conv1d.hpp"
#include "fluxop/dataset.hpp"
#include "fluxop/error.hpp"
#include "fluxop/loss.hpp"
#include "fluxop/nn.hpp"
#include "fluxop/rng.hpp"
#include "fluxop/tally.hpp"

namespace fluxop {

/// Mini-batch in normalized space, grouped by function. Rows of `trunk`
/// in [offsets[f], offsets[f + 1]) belong to function f, whose normalized
/// sensor vector is row f of `branch`.
struct OperatorBatch {
  Matrix branch;
  Matrix trunk;
  std::vector<double> target;
  std::vector<std::size_t> offsets{0};

  std::size_t functions() const { return offsets.size() - 1; }
  std::size_t points() const { return offsets.back(); }

  void validate(std::size_t sensors) const {
    if (static_cast<std::size_t>(branch.rows()) != functions() || static_cast<std::size_t>(branch.cols()) != sensors)
      throw ShapeError("batch: branch matrix is " + std::to_string(branch.rows()) + "x" +
                       std::to_string(branch.cols()) + ", expected " + std::to_string(functions()) + "x" +
                       std::to_string(sensors));
    if (static_cast<std::size_t>(trunk.rows()) != points() || trunk.cols() != 2)
      throw ShapeError("batch: trunk matrix does not match offsets");
    if (!target.empty() && target.size() != points()) throw ShapeError("batch: target length mismatch");
  }
};

/// Normalized branch row for raw sensor values.
inline Matrix normalized_branch_row(const NormalizationMeta& norm, std::span<const double> raw) {
  Matrix row(1, static_cast<Eigen::Index>(raw.size()));
  std::vector<double> tmp(raw.size());
  norm.normalize_branch(raw, tmp);
  for (std::size_t i = 0; i < raw.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = tmp[i];
  return row;
}

inline Matrix normalized_points(const NormalizationMeta& norm, std::span<const std::array<double, 2>> points) {
  Matrix t(static_cast<Eigen::Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    t(static_cast<Eigen::Index>(i), 0) = norm.scale_coord(points[i][0], 0);
    t(static_cast<Eigen::Index>(i), 1) = norm.scale_coord(points[i][1], 1);
  }
  return t;
}

inline std::vector<std::array<double, 2>> grid_centers(const TallyGrid& g) {
  std::vector<std::array<double, 2>> pts;
  pts.reserve(g.cells());
  for (std::size_t iy = 0; iy < g.ny; ++iy)
    for (std::size_t ix = 0; ix < g.nx; ++ix) pts.push_back({g.center_x(ix), g.center_y(iy)});
  return pts;
}

// ---------------------------------------------------------------------------
// DeepONet

/// G(u)(y) ~ <branch(u), trunk(y)> + output_bias, evaluated in normalized
/// target space.
struct DeepONetModel {
  MLPParams branch;
  MLPParams trunk;
  double output_bias = 0.0;
  NormalizationMeta norm;

  std::size_t sensors() const { return branch.input_width(); }
  std::size_t latent_width() const { return branch.output_width(); }

  /// branch tensors, trunk tensors, output bias.
  std::vector<std::span<double>> tensors() {
    auto t = branch.tensors();
    for (auto s : trunk.tensors()) t.push_back(s);
    t.emplace_back(&output_bias, 1);
    return t;
  }

  void bump_revision() {
    ++branch.revision;
    ++trunk.revision;
  }

  bool operator==(const DeepONetModel&) const = default;
};

struct DeepONetArch {
  std::vector<std::size_t> branch_hidden{80, 80};
  std::vector<std::size_t> trunk_hidden{80, 80};
  Activation activation = Activation::tanh;
};

inline DeepONetModel make_deeponet(std::size_t sensors, const NormalizationMeta& norm, RngStream& rng,
                                   const DeepONetArch& arch = {}) {
  if (arch.branch_hidden.empty() || arch.trunk_hidden.empty()) throw ConfigError("deeponet: empty sub-network");
  if (arch.branch_hidden.back() != arch.trunk_hidden.back())
    throw ConfigError("deeponet: branch and trunk output widths differ");
  std::vector<std::size_t> bs{sensors}, ts{2};
  bs.insert(bs.end(), arch.branch_hidden.begin(), arch.branch_hidden.end());
  ts.insert(ts.end(), arch.trunk_hidden.begin(), arch.trunk_hidden.end());
  DeepONetModel m;
  RngStream branch_rng = rng.substream(1);
  RngStream trunk_rng = rng.substream(2);
  m.branch = init_params(bs, arch.activation, branch_rng);
  m.trunk = init_params(ts, arch.activation, trunk_rng);
  m.norm = norm;
  return m;
}

namespace detail {

// Eigen peels vectorized loops to the buffer's address, so results on
// malloc'd memory depend on where it landed. All Eigen arithmetic runs on
// Eigen-owned storage and is copied out exactly.
inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

/// Dot-product head: pred[i] = <B[f(i)], T[i]> + bias.
inline std::vector<double> combine_branch_trunk(const Matrix& branch_out, const Matrix& trunk_out,
                                                std::span<const std::size_t> offsets, double bias) {
  Eigen::VectorXd pred = Eigen::VectorXd::Zero(trunk_out.rows());
  for (std::size_t f = 0; f + 1 < offsets.size(); ++f) {
    const auto off = static_cast<Eigen::Index>(offsets[f]);
    const auto n = static_cast<Eigen::Index>(offsets[f + 1] - offsets[f]);
    if (n == 0) continue;
    pred.segment(off, n).noalias() =
        trunk_out.middleRows(off, n) * branch_out.row(static_cast<Eigen::Index>(f)).transpose();
    pred.segment(off, n).array() += bias;
  }
  return detail::to_std(pred);
}

inline std::vector<double> deeponet_forward(const DeepONetModel& m, const OperatorBatch& batch) {
  batch.validate(m.sensors());
  return combine_branch_trunk(predict(m.branch, batch.branch), predict(m.trunk, batch.trunk), batch.offsets,
                              m.output_bias);
}

/// Single-function inference on normalized inputs. When the last trunk
/// layer is affine, <g, h W + b> is evaluated as h (W g) + <b, g>, which
/// replaces a points x p x p product by a matrix-vector product.
inline std::vector<double> deeponet_infer(const DeepONetModel& m, const Matrix& branch_row, const Matrix& trunk) {
  if (branch_row.rows() != 1) throw ShapeError("deeponet_infer: expects one branch row");
  const Matrix g = predict(m.branch, branch_row);
  const DenseLayer& last = m.trunk.layers.back();
  if (last.activation != Activation::identity || static_cast<std::size_t>(trunk.cols()) != m.trunk.input_width()) {
    const std::array<std::size_t, 2> offsets{0, static_cast<std::size_t>(trunk.rows())};
    return combine_branch_trunk(g, predict(m.trunk, trunk), offsets, m.output_bias);
  }
  Matrix h = trunk;
  for (std::size_t l = 0; l + 1 < m.trunk.layers.size(); ++l) {
    const DenseLayer& layer = m.trunk.layers[l];
    Matrix z = h * layer.weight;
    z.rowwise() += layer.bias;
    apply_activation(layer.activation, z);
    h = std::move(z);
  }
  const Eigen::VectorXd folded = last.weight * g.row(0).transpose();
  const double offset = last.bias.dot(g.row(0)) + m.output_bias;
  Eigen::VectorXd out = h * folded;
  out.array() += offset;
  return detail::to_std(out);
}

/// Predictions for one function at raw trunk points (cm), in normalized
/// target space. The branch network runs once.
inline std::vector<double> deeponet_predict(const DeepONetModel& m, std::span<const double> branch_input,
                                            std::span<const std::array<double, 2>> trunk_points) {
  if (branch_input.size() != m.sensors())
    throw ShapeError("deeponet_predict: got " + std::to_string(branch_input.size()) + " sensor values, model expects " +
                     std::to_string(m.sensors()));
  return deeponet_infer(m, normalized_branch_row(m.norm, branch_input), normalized_points(m.norm, trunk_points));
}

struct DeepONetGradient {
  GradientBundle branch;
  GradientBundle trunk;
  double output_bias = 0.0;

  std::vector<std::span<const double>> tensors() const {
    auto t = branch.tensors();
    for (auto s : trunk.tensors()) t.push_back(s);
    t.emplace_back(&output_bias, 1);
    return t;
  }
};

/// Mean L2 relative error over the batch's functions; fills `grad` if given.
inline double deeponet_loss(const DeepONetModel& m, const OperatorBatch& batch, DeepONetGradient* grad = nullptr) {
  batch.validate(m.sensors());
  const ForwardCache bc = forward(m.branch, batch.branch);
  const ForwardCache tc = forward(m.trunk, batch.trunk);
  const Matrix& B = bc.output();
  const Matrix& T = tc.output();
  const std::vector<double> pred = combine_branch_trunk(B, T, batch.offsets, m.output_bias);
  std::vector<double> gpred(grad ? pred.size() : 0);
  const double loss = mean_l2_relative_error(pred, batch.target, batch.offsets, gpred);
  if (!grad) return loss;

  const Eigen::VectorXd gvec =
      Eigen::Map<const Eigen::VectorXd>(gpred.data(), static_cast<Eigen::Index>(gpred.size()));
  Matrix gB = Matrix::Zero(B.rows(), B.cols());
  Matrix gT(T.rows(), T.cols());
  double gbias = 0.0;
  for (std::size_t f = 0; f + 1 < batch.offsets.size(); ++f) {
    const auto off = static_cast<Eigen::Index>(batch.offsets[f]);
    const auto n = static_cast<Eigen::Index>(batch.offsets[f + 1] - batch.offsets[f]);
    if (n == 0) continue;
    const auto g = gvec.segment(off, n);
    gT.middleRows(off, n).noalias() = g * B.row(static_cast<Eigen::Index>(f));
    gB.row(static_cast<Eigen::Index>(f)).noalias() = g.transpose() * T.middleRows(off, n);
    gbias += g.sum();
  }
  grad->branch = backward(m.branch, bc, gB);
  grad->trunk = backward(m.trunk, tc, gT);
  grad->output_bias = gbias;
  return loss;
}

// ---------------------------------------------------------------------------
// FCN baseline: coordinates -> flux for one fixed source function.

struct FcnBaseline {
  MLPParams net;
  NormalizationMeta norm;
  std::uint64_t spec_id = 0;

  std::vector<std::span<double>> tensors() { return net.tensors(); }
  void bump_revision() { ++net.revision; }
  bool operator==(const FcnBaseline&) const = default;
};

inline FcnBaseline make_fcn(const NormalizationMeta& norm, RngStream& rng,
                            const std::vector<std::size_t>& hidden = {64, 64, 64}) {
  std::vector<std::size_t> sizes{2};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  FcnBaseline f;
  f.net = init_params(sizes, Activation::tanh, rng);
  f.norm = norm;
  return f;
}

inline std::vector<double> fcn_forward(const FcnBaseline& f, const Matrix& trunk) {
  const Matrix out = predict(f.net, trunk);
  return {out.data(), out.data() + out.size()};
}

/// Mean squared error on normalized targets.
inline double fcn_loss(const FcnBaseline& f, const Matrix& trunk, std::span<const double> target,
                       GradientBundle* grad = nullptr) {
  const ForwardCache c = forward(f.net, trunk);
  const Matrix& out = c.output();
  std::vector<double> g(grad ? target.size() : 0);
  const double loss = mean_squared_error({out.data(), static_cast<std::size_t>(out.size())}, target, g);
  if (grad) {
    Eigen::Map<const Matrix> gm(g.data(), out.rows(), 1);
    *grad = backward(f.net, c, gm);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// CNN baseline: two strided conv layers over the sensor vector, then an MLP
// head on [conv features, x, y].

struct CnnBaseline {
  Conv1dLayer conv1;
  Conv1dLayer conv2;
  MLPParams head;
  NormalizationMeta norm;

  std::size_t sensors() const { return conv1.input_length; }
  std::size_t feature_width() const { return conv2.output_width(); }

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> t;
    for (Conv1dLayer* c : {&conv1, &conv2}) {
      t.emplace_back(c->weight.data(), static_cast<std::size_t>(c->weight.size()));
      t.emplace_back(c->bias.data(), static_cast<std::size_t>(c->bias.size()));
    }
    for (auto s : head.tensors()) t.push_back(s);
    return t;
  }
  void bump_revision() { ++head.revision; }
  bool operator==(const CnnBaseline&) const = default;
};

struct CnnArch {
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t channels1 = 8;
  std::size_t channels2 = 16;
  std::size_t head_hidden = 64;
};

inline CnnBaseline make_cnn(std::size_t sensors, const NormalizationMeta& norm, RngStream& rng,
                            const CnnArch& arch = {}) {
  CnnBaseline c;
  RngStream r1 = rng.substream(1), r2 = rng.substream(2), r3 = rng.substream(3);
  const std::size_t pad = arch.kernel / 2;
  c.conv1 = make_conv1d(1, arch.channels1, arch.kernel, arch.stride, pad, sensors, Activation::tanh, r1);
  c.conv2 = make_conv1d(arch.channels1, arch.channels2, arch.kernel, arch.stride, pad, c.conv1.output_length(),
                        Activation::tanh, r2);
  c.head = init_params({c.conv2.output_width() + 2, arch.head_hidden, 1}, Activation::tanh, r3);
  c.norm = norm;
  return c;
}

namespace detail {

inline Matrix cnn_head_input(const Matrix& features, const OperatorBatch& batch) {
  const Eigen::Index fw = features.cols();
  Matrix h(static_cast<Eigen::Index>(batch.points()), fw + 2);
  for (std::size_t f = 0; f < batch.functions(); ++f) {
    for (std::size_t i = batch.offsets[f]; i < batch.offsets[f + 1]; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      h.row(r).head(fw) = features.row(static_cast<Eigen::Index>(f));
      h(r, fw) = batch.trunk(r, 0);
      h(r, fw + 1) = batch.trunk(r, 1);
    }
  }
  return h;
}

}  // namespace detail

inline std::vector<double> cnn_forward(const CnnBaseline& c, const OperatorBatch& batch) {
  batch.validate(c.sensors());
  const Matrix a1 = conv1d_forward(c.conv1, batch.branch);
  const Matrix a2 = conv1d_forward(c.conv2, a1);
  const Matrix out = predict(c.head, detail::cnn_head_input(a2, batch));
  return {out.data(), out.data() + out.size()};
}

struct CnnGradient {
  Conv1dGradient conv1;
  Conv1dGradient conv2;
  GradientBundle head;

  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> t;
    for (const Conv1dGradient* g : {&conv1, &conv2}) {
      t.emplace_back(g->weight.data(), static_cast<std::size_t>(g->weight.size()));
      t.emplace_back(g->bias.data(), static_cast<std::size_t>(g->bias.size()));
    }
    for (auto s : head.tensors()) t.push_back(s);
    return t;
  }
};

inline double cnn_loss(const CnnBaseline& c, const OperatorBatch& batch, CnnGradient* grad = nullptr) {
  batch.validate(c.sensors());
  const Matrix a1 = conv1d_forward(c.conv1, batch.branch);
  const Matrix a2 = conv1d_forward(c.conv2, a1);
  const ForwardCache hc = forward(c.head, detail::cnn_head_input(a2, batch));
  const Matrix& out = hc.output();
  std::vector<double> g(grad ? batch.points() : 0);
  const double loss = mean_squared_error({out.data(), static_cast<std::size_t>(out.size())}, batch.target, g);
  if (!grad) return loss;

  Eigen::Map<const Matrix> gm(g.data(), out.rows(), 1);
  grad->head = backward(c.head, hc, gm);
  const Eigen::Index fw = a2.cols();
  Matrix ga2 = Matrix::Zero(a2.rows(), fw);
  for (std::size_t f = 0; f < batch.functions(); ++f)
    for (std::size_t i = batch.offsets[f]; i < batch.offsets[f + 1]; ++i)
      ga2.row(static_cast<Eigen::Index>(f)) += grad->head.input_grad.row(static_cast<Eigen::Index>(i)).head(fw);
  grad->conv2 = conv1d_backward(c.conv2, a1, a2, ga2);
  grad->conv1 = conv1d_backward(c.conv1, batch.branch, a1, grad->conv2.input_grad);
  return loss;
}

// ---------------------------------------------------------------------------
// Full-field prediction in raw flux units.

inline OperatorBatch field_batch(const NormalizationMeta& norm, std::span<const double> sensors,
                                 const TallyGrid& grid) {
  OperatorBatch b;
  b.branch = normalized_branch_row(norm, sensors);
  const auto pts = grid_centers(grid);
  b.trunk = normalized_points(norm, pts);
  b.offsets = {0, pts.size()};
  return b;
}

inline std::vector<double> to_raw_flux(const NormalizationMeta& norm, std::vector<double> normalized) {
  for (double& v : normalized) v = norm.inverse_target(v);
  return normalized;
}

inline std::vector<double> predict_field(const DeepONetModel& m, std::span<const double> sensors,
                                         const TallyGrid& grid) {
  if (sensors.size() != m.sensors()) throw ShapeError("predict_field: sensor count does not match the model");
  const OperatorBatch b = field_batch(m.norm, sensors, grid);
  return to_raw_flux(m.norm, deeponet_infer(m, b.branch, b.trunk));
}

inline std::vector<double> predict_field(const FcnBaseline& f, std::span<const double> /*sensors*/,
                                         const TallyGrid& grid) {
  return to_raw_flux(f.norm, fcn_forward(f, normalized_points(f.norm, grid_centers(grid))));
}

inline std::vector<double> predict_field(const CnnBaseline& c, std::span<const double> sensors,
                                         const TallyGrid& grid) {
  return to_raw_flux(c.norm, cnn_forward(c, field_batch(c.norm, sensors, grid)));
}

}  // namespace fluxop
