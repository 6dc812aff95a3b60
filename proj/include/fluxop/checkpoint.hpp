#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fluxop/binary_io.hpp"
#include "fluxop/dataset.hpp"
#include "fluxop/error.hpp"
#include "fluxop/models.hpp"
#include "fluxop/nn.hpp"

namespace fluxop {

// Checkpoint container, version 1. Payload:
//   u64 config hash
//   u32 model kind (1 DeepONet, 2 FCN, 3 CNN)
//   normalization metadata (same layout as the dataset file)
//   model body:
//     DeepONet: mlp branch, mlp trunk, f64 output_bias
//     FCN:      u64 spec_id, mlp net
//     CNN:      conv conv1, conv conv2, mlp head
//   optimizer: f64 lr, beta1, beta2, eps_hat, u64 step, u64 tensor count,
//              then f64[] first and f64[] second per tensor
// mlp  = u64 layer count, then per layer u64 rows, u64 cols, u8 activation,
//        f64[] weight (column-major), f64[] bias
// conv = u64 in, out, kernel, stride, padding, input_length, u8 activation,
//        f64[] weight (column-major), f64[] bias

inline constexpr std::string_view kCheckpointMagic = "FXOPCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint32_t { deeponet = 1, fcn = 2, cnn = 3 };

using AnyModel = std::variant<DeepONetModel, FcnBaseline, CnnBaseline>;

struct Checkpoint {
  AnyModel model;
  AdamState optimizer;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline void put_matrix(ByteWriter& w, const Matrix& m) {
  w.f64s({m.data(), static_cast<std::size_t>(m.size())});
}

inline void get_matrix(ByteReader& r, Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  const auto v = r.f64s();
  if (v.size() != static_cast<std::size_t>(rows * cols)) throw FormatError("checkpoint: tensor size mismatch");
  m = Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline void put_row(ByteWriter& w, const RowVector& v) { w.f64s({v.data(), static_cast<std::size_t>(v.size())}); }

inline void get_row(ByteReader& r, RowVector& v, Eigen::Index n) {
  const auto d = r.f64s();
  if (d.size() != static_cast<std::size_t>(n)) throw FormatError("checkpoint: bias size mismatch");
  v = Eigen::Map<const RowVector>(d.data(), n);
}

inline Activation get_activation(ByteReader& r) {
  const std::uint8_t a = r.u8();
  if (a > 2) throw FormatError("checkpoint: unknown activation tag");
  return static_cast<Activation>(a);
}

inline void put_mlp(ByteWriter& w, const MLPParams& p) {
  w.u64(p.layers.size());
  for (const auto& l : p.layers) {
    w.u64(static_cast<std::uint64_t>(l.weight.rows()));
    w.u64(static_cast<std::uint64_t>(l.weight.cols()));
    w.u8(static_cast<std::uint8_t>(l.activation));
    put_matrix(w, l.weight);
    put_row(w, l.bias);
  }
}

inline MLPParams get_mlp(ByteReader& r) {
  MLPParams p;
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw FormatError("checkpoint: implausible layer count");
  p.layers.resize(n);
  for (auto& l : p.layers) {
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    l.activation = get_activation(r);
    get_matrix(r, l.weight, rows, cols);
    get_row(r, l.bias, cols);
  }
  for (std::size_t i = 1; i < p.layers.size(); ++i)
    if (p.layers[i].weight.rows() != p.layers[i - 1].weight.cols()) throw FormatError("checkpoint: layer shapes do not chain");
  return p;
}

inline void put_conv(ByteWriter& w, const Conv1dLayer& c) {
  for (std::uint64_t v : {c.in_channels, c.out_channels, c.kernel, c.stride, c.padding, c.input_length}) w.u64(v);
  w.u8(static_cast<std::uint8_t>(c.activation));
  put_matrix(w, c.weight);
  put_row(w, c.bias);
}

inline Conv1dLayer get_conv(ByteReader& r) {
  Conv1dLayer c;
  c.in_channels = r.u64();
  c.out_channels = r.u64();
  c.kernel = r.u64();
  c.stride = r.u64();
  c.padding = r.u64();
  c.input_length = r.u64();
  c.activation = get_activation(r);
  get_matrix(r, c.weight, static_cast<Eigen::Index>(c.out_channels), static_cast<Eigen::Index>(c.in_channels * c.kernel));
  get_row(r, c.bias, static_cast<Eigen::Index>(c.out_channels));
  return c;
}

inline void put_adam(ByteWriter& w, const AdamState& s) {
  w.f64(s.config.lr);
  w.f64(s.config.beta1);
  w.f64(s.config.beta2);
  w.f64(s.config.eps_hat);
  w.u64(s.step);
  w.u64(s.first.size());
  for (std::size_t k = 0; k < s.first.size(); ++k) {
    w.f64s(s.first[k]);
    w.f64s(s.second[k]);
  }
}

inline AdamState get_adam(ByteReader& r) {
  AdamState s;
  s.config.lr = r.f64();
  s.config.beta1 = r.f64();
  s.config.beta2 = r.f64();
  s.config.eps_hat = r.f64();
  s.step = r.u64();
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw FormatError("checkpoint: implausible optimizer tensor count");
  for (std::uint64_t k = 0; k < n; ++k) {
    s.first.push_back(r.f64s());
    s.second.push_back(r.f64s());
  }
  return s;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.u64(ck.config_hash);
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, DeepONetModel>) {
          w.u32(static_cast<std::uint32_t>(ModelKind::deeponet));
          detail::put_norm(w, m.norm);
          detail::put_mlp(w, m.branch);
          detail::put_mlp(w, m.trunk);
          w.f64(m.output_bias);
        } else if constexpr (std::is_same_v<M, FcnBaseline>) {
          w.u32(static_cast<std::uint32_t>(ModelKind::fcn));
          detail::put_norm(w, m.norm);
          w.u64(m.spec_id);
          detail::put_mlp(w, m.net);
        } else {
          w.u32(static_cast<std::uint32_t>(ModelKind::cnn));
          detail::put_norm(w, m.norm);
          detail::put_conv(w, m.conv1);
          detail::put_conv(w, m.conv2);
          detail::put_mlp(w, m.head);
        }
      },
      ck.model);
  detail::put_adam(w, ck.optimizer);
  return wrap_container(kCheckpointMagic, kCheckpointVersion, w.buffer());
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(unwrap_container(bytes, kCheckpointMagic, kCheckpointVersion));
  Checkpoint ck;
  ck.config_hash = r.u64();
  const auto kind = static_cast<ModelKind>(r.u32());
  switch (kind) {
    case ModelKind::deeponet: {
      DeepONetModel m;
      m.norm = detail::get_norm(r);
      m.branch = detail::get_mlp(r);
      m.trunk = detail::get_mlp(r);
      m.output_bias = r.f64();
      ck.model = std::move(m);
      break;
    }
    case ModelKind::fcn: {
      FcnBaseline m;
      m.norm = detail::get_norm(r);
      m.spec_id = r.u64();
      m.net = detail::get_mlp(r);
      ck.model = std::move(m);
      break;
    }
    case ModelKind::cnn: {
      CnnBaseline m;
      m.norm = detail::get_norm(r);
      m.conv1 = detail::get_conv(r);
      m.conv2 = detail::get_conv(r);
      m.head = detail::get_mlp(r);
      ck.model = std::move(m);
      break;
    }
    default:
      throw FormatError("checkpoint: unknown model kind");
  }
  ck.optimizer = detail::get_adam(r);
  if (r.remaining() != 0) throw FormatError("checkpoint: unread bytes at end of payload");
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace fluxop
