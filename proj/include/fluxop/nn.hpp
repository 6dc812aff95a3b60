#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fluxop/error.hpp"
#include "fluxop/rng.hpp"

namespace fluxop {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation : std::uint8_t { tanh = 0, relu = 1, identity = 2 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

/// tanh(x) = sign(x) (1 - e) / (1 + e) with e = exp(-2|x|). Eigen's
/// double-precision tanh is scalar; exp vectorizes.
inline void tanh_inplace(Matrix& z) {
  const Eigen::ArrayXXd e = (-2.0 * z.array().abs()).exp();
  z.array() = z.array().sign() * (1.0 - e) / (1.0 + e);
}

inline void apply_activation(Activation a, Matrix& z) {
  switch (a) {
    case Activation::tanh: tanh_inplace(z); break;
    case Activation::relu: z = z.array().max(0.0); break;
    case Activation::identity: break;
  }
}

/// Multiplies `delta` in place by the activation derivative, expressed
/// through the post-activation values `a`.
inline void scale_by_derivative(Activation act, const Matrix& a, Matrix& delta) {
  switch (act) {
    case Activation::tanh: delta.array() *= 1.0 - a.array().square(); break;
    case Activation::relu: delta.array() *= (a.array() > 0.0).cast<double>(); break;
    case Activation::identity: break;
  }
}

/// y = act(x W + b) for a batch x with one sample per row.
struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  RowVector bias;
  Activation activation = Activation::tanh;
};

struct MLPParams {
  std::vector<DenseLayer> layers;
  /// Bumped by every optimizer step; lets backward reject stale caches.
  std::uint64_t revision = 0;

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s;
    if (layers.empty()) return s;
    s.push_back(static_cast<std::size_t>(layers.front().weight.rows()));
    for (const auto& l : layers) s.push_back(static_cast<std::size_t>(l.weight.cols()));
    return s;
  }

  std::size_t input_width() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.rows()); }
  std::size_t output_width() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.cols()); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Parameter tensors in a fixed order: W0, b0, W1, b1, ...
  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> t;
    for (auto& l : layers) {
      t.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      t.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return t;
  }

  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> t;
    for (const auto& l : layers) {
      t.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      t.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return t;
  }

  bool operator==(const MLPParams& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& a = layers[i];
      const auto& b = o.layers[i];
      if (a.activation != b.activation || a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
          a.weight != b.weight || a.bias != b.bias)
        return false;
    }
    return true;
  }
};

/// Glorot-uniform weights, zero biases. Hidden layers use `hidden`, the last
/// layer uses `output`.
inline MLPParams init_params(std::span<const std::size_t> sizes, Activation hidden, RngStream& rng,
                             Activation output = Activation::identity) {
  if (sizes.size() < 2) throw ConfigError("init_params: need at least two layer sizes");
  for (std::size_t s : sizes)
    if (s == 0) throw ConfigError("init_params: layer size 0");
  MLPParams p;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(sizes[l]);
    const auto fan_out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    for (Eigen::Index c = 0; c < fan_out; ++c)
      for (Eigen::Index r = 0; r < fan_in; ++r) layer.weight(r, c) = rng.uniform(-bound, bound);
    layer.bias = RowVector::Zero(fan_out);
    layer.activation = l + 2 == sizes.size() ? output : hidden;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline MLPParams init_params(std::initializer_list<std::size_t> sizes, Activation hidden, RngStream& rng,
                             Activation output = Activation::identity) {
  return init_params(std::span<const std::size_t>(sizes.begin(), sizes.size()), hidden, rng, output);
}

/// Intermediates of one forward pass. activations[0] is the input,
/// activations[l + 1] the output of layer l.
struct ForwardCache {
  std::vector<Matrix> activations;
  std::vector<std::size_t> layer_sizes;
  std::uint64_t revision = 0;

  const Matrix& output() const { return activations.back(); }
};

inline ForwardCache forward(const MLPParams& p, const Matrix& input) {
  if (p.layers.empty()) throw ShapeError("forward: empty network");
  if (static_cast<std::size_t>(input.cols()) != p.input_width())
    throw ShapeError("forward: input width " + std::to_string(input.cols()) + " != " + std::to_string(p.input_width()));
  ForwardCache cache;
  cache.layer_sizes = p.layer_sizes();
  cache.revision = p.revision;
  cache.activations.reserve(p.layers.size() + 1);
  cache.activations.push_back(input);
  for (const auto& l : p.layers) {
    Matrix z = cache.activations.back() * l.weight;
    z.rowwise() += l.bias;
    apply_activation(l.activation, z);
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

/// Forward pass without keeping intermediates.
inline Matrix predict(const MLPParams& p, const Matrix& input) {
  if (p.layers.empty()) throw ShapeError("predict: empty network");
  if (static_cast<std::size_t>(input.cols()) != p.input_width())
    throw ShapeError("predict: input width " + std::to_string(input.cols()) + " != " + std::to_string(p.input_width()));
  Matrix a = input;
  for (const auto& l : p.layers) {
    Matrix z = a * l.weight;
    z.rowwise() += l.bias;
    apply_activation(l.activation, z);
    a = std::move(z);
  }
  return a;
}

struct LayerGradient {
  Matrix weight;
  RowVector bias;
};

/// Gradients mirroring MLPParams, plus the gradient with respect to the
/// network input.
struct GradientBundle {
  std::vector<LayerGradient> layers;
  Matrix input_grad;

  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> t;
    for (const auto& l : layers) {
      t.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      t.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return t;
  }
};

/// Reverse-mode gradients of sum(output .* output_grad).
inline GradientBundle backward(const MLPParams& p, const ForwardCache& cache, const Matrix& output_grad) {
  if (cache.revision != p.revision || cache.layer_sizes != p.layer_sizes() ||
      cache.activations.size() != p.layers.size() + 1)
    throw ShapeError("backward: cache does not belong to these parameters");
  const Matrix& out = cache.output();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
    throw ShapeError("backward: output_grad shape does not match forward output");

  GradientBundle g;
  g.layers.resize(p.layers.size());
  Matrix delta = output_grad;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    scale_by_derivative(p.layers[l].activation, cache.activations[l + 1], delta);
    const Matrix& a_in = cache.activations[l];
    g.layers[l].weight = a_in.transpose() * delta;
    g.layers[l].bias = delta.colwise().sum();
    delta = delta * p.layers[l].weight.transpose();
  }
  g.input_grad = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;

  bool operator==(const AdamState& o) const {
    return config.lr == o.config.lr && config.beta1 == o.config.beta1 && config.beta2 == o.config.beta2 &&
           config.eps_hat == o.config.eps_hat && step == o.step && first == o.first && second == o.second;
  }
};

template <class Tensors>
AdamState make_adam_state(const Tensors& tensors, AdamConfig config = {}) {
  AdamState s;
  s.config = config;
  for (const auto& t : tensors) {
    s.first.emplace_back(t.size(), 0.0);
    s.second.emplace_back(t.size(), 0.0);
  }
  return s;
}

/// One bias-corrected Adam update over matching parameter and gradient
/// tensors. Nothing is modified if any gradient entry is non-finite.
inline void adam_update(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                        AdamState& s) {
  if (params.size() != grads.size() || params.size() != s.first.size())
    throw ShapeError("adam: tensor count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size() || params[k].size() != s.first[k].size())
      throw ShapeError("adam: tensor " + std::to_string(k) + " shape mismatch");
    for (double g : grads[k])
      if (!std::isfinite(g)) throw TrainingError("adam: non-finite gradient", s.step + 1);
  }
  const AdamConfig& c = s.config;
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = s.first[k];
    auto& v = s.second[k];
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k][i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      params[k][i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps_hat);
    }
  }
}

inline void adam_step(MLPParams& p, const GradientBundle& g, AdamState& s) {
  const auto pt = p.tensors();
  const auto gt = g.tensors();
  adam_update(pt, gt, s);
  ++p.revision;
}

}  // namespace fluxop
