#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fluxop/error.hpp"
#include "fluxop/nn.hpp"
#include "fluxop/rng.hpp"

namespace fluxop {

/// 1D convolution over channel-major rows: a sample with C channels of
/// length L is a row of C * L values, channel c occupying [c * L, (c + 1) * L).
/// Zero padding on both sides.
struct Conv1dLayer {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t padding = 2;
  std::size_t input_length = 0;
  Activation activation = Activation::tanh;
  Matrix weight;     // out_channels x (in_channels * kernel)
  RowVector bias;    // out_channels

  std::size_t output_length() const { return (input_length + 2 * padding - kernel) / stride + 1; }
  std::size_t input_width() const { return in_channels * input_length; }
  std::size_t output_width() const { return out_channels * output_length(); }

  bool operator==(const Conv1dLayer& o) const {
    return in_channels == o.in_channels && out_channels == o.out_channels && kernel == o.kernel &&
           stride == o.stride && padding == o.padding && input_length == o.input_length &&
           activation == o.activation && weight == o.weight && bias == o.bias;
  }
};

/// Glorot-uniform with fan_in = in_channels * kernel, fan_out = out_channels * kernel.
inline Conv1dLayer make_conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                               std::size_t stride, std::size_t padding, std::size_t input_length,
                               Activation act, RngStream& rng) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || input_length == 0)
    throw ConfigError("conv1d: zero-sized dimension");
  if (input_length + 2 * padding < kernel) throw ConfigError("conv1d: kernel longer than padded input");
  Conv1dLayer c;
  c.in_channels = in_channels;
  c.out_channels = out_channels;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.input_length = input_length;
  c.activation = act;
  const double bound = std::sqrt(6.0 / static_cast<double>((in_channels + out_channels) * kernel));
  c.weight.resize(static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(in_channels * kernel));
  for (Eigen::Index j = 0; j < c.weight.cols(); ++j)
    for (Eigen::Index i = 0; i < c.weight.rows(); ++i) c.weight(i, j) = rng.uniform(-bound, bound);
  c.bias = RowVector::Zero(static_cast<Eigen::Index>(out_channels));
  return c;
}

inline Matrix conv1d_forward(const Conv1dLayer& c, const Matrix& input) {
  if (static_cast<std::size_t>(input.cols()) != c.input_width())
    throw ShapeError("conv1d: input width " + std::to_string(input.cols()) + " != " + std::to_string(c.input_width()));
  const std::size_t L = c.input_length;
  const std::size_t Lo = c.output_length();
  const auto pad = static_cast<long>(c.padding);
  Matrix out(input.rows(), static_cast<Eigen::Index>(c.output_width()));
  for (Eigen::Index b = 0; b < input.rows(); ++b) {
    for (std::size_t o = 0; o < c.out_channels; ++o) {
      for (std::size_t j = 0; j < Lo; ++j) {
        double s = c.bias(static_cast<Eigen::Index>(o));
        const long start = static_cast<long>(j * c.stride) - pad;
        for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
          for (std::size_t k = 0; k < c.kernel; ++k) {
            const long pos = start + static_cast<long>(k);
            if (pos < 0 || pos >= static_cast<long>(L)) continue;
            s += c.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ch * c.kernel + k)) *
                 input(b, static_cast<Eigen::Index>(ch * L + static_cast<std::size_t>(pos)));
          }
        }
        out(b, static_cast<Eigen::Index>(o * Lo + j)) = s;
      }
    }
  }
  apply_activation(c.activation, out);
  return out;
}

struct Conv1dGradient {
  Matrix weight;
  RowVector bias;
  Matrix input_grad;
};

/// Gradients of sum(output .* output_grad) given the forward input and output.
inline Conv1dGradient conv1d_backward(const Conv1dLayer& c, const Matrix& input, const Matrix& output,
                                      const Matrix& output_grad) {
  if (output_grad.rows() != output.rows() || output_grad.cols() != output.cols() || input.rows() != output.rows())
    throw ShapeError("conv1d_backward: shape mismatch");
  Matrix delta = output_grad;
  scale_by_derivative(c.activation, output, delta);
  const std::size_t L = c.input_length;
  const std::size_t Lo = c.output_length();
  const auto pad = static_cast<long>(c.padding);
  Conv1dGradient g;
  g.weight = Matrix::Zero(c.weight.rows(), c.weight.cols());
  g.bias = RowVector::Zero(c.bias.size());
  g.input_grad = Matrix::Zero(input.rows(), input.cols());
  for (Eigen::Index b = 0; b < input.rows(); ++b) {
    for (std::size_t o = 0; o < c.out_channels; ++o) {
      for (std::size_t j = 0; j < Lo; ++j) {
        const double d = delta(b, static_cast<Eigen::Index>(o * Lo + j));
        if (d == 0.0) continue;
        g.bias(static_cast<Eigen::Index>(o)) += d;
        const long start = static_cast<long>(j * c.stride) - pad;
        for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
          for (std::size_t k = 0; k < c.kernel; ++k) {
            const long pos = start + static_cast<long>(k);
            if (pos < 0 || pos >= static_cast<long>(L)) continue;
            const auto wi = static_cast<Eigen::Index>(ch * c.kernel + k);
            const auto xi = static_cast<Eigen::Index>(ch * L + static_cast<std::size_t>(pos));
            g.weight(static_cast<Eigen::Index>(o), wi) += d * input(b, xi);
            g.input_grad(b, xi) += d * c.weight(static_cast<Eigen::Index>(o), wi);
          }
        }
      }
    }
  }
  return g;
}

}  // namespace fluxop
