#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fluxop/binary_io.hpp"
#include "fluxop/error.hpp"
#include "fluxop/geometry.hpp"
#include "fluxop/parallel.hpp"
#include "fluxop/rng.hpp"
#include "fluxop/source_model.hpp"
#include "fluxop/tally.hpp"
#include "fluxop/transport.hpp"

namespace fluxop {

/// Input and target conditioning fitted on the training functions. Flux is
/// linear in the source, so every map here is affine: the normalized
/// operator stays linear up to a constant.
///
/// Targets: t = (flux - mean) / std over all training cells.
/// Branch inputs: u / scale, scale = largest training sensor value.
/// Trunk coordinates: cell centers mapped linearly so the first and last
/// centers on each axis land on -gain and +gain.
struct NormalizationMeta {
  bool fitted = false;
  double target_mean = 0.0;
  double target_std = 1.0;
  std::size_t sensors = 0;
  double branch_scale = 1.0;
  std::array<double, 2> coord_min{0.0, 0.0};
  std::array<double, 2> coord_max{1.0, 1.0};
  double coord_gain = 1.0;

  double transform_target(double flux) const { return (flux - target_mean) / target_std; }
  double inverse_target(double t) const { return t * target_std + target_mean; }

  double scale_coord(double v, std::size_t axis) const {
    const double span = coord_max[axis] - coord_min[axis];
    if (span <= 0.0) return 0.0;
    return coord_gain * (2.0 * (v - coord_min[axis]) / span - 1.0);
  }

  void normalize_branch(std::span<const double> raw, std::span<double> out) const {
    if (raw.size() != sensors || out.size() != raw.size())
      throw ShapeError("branch input has " + std::to_string(raw.size()) + " sensors, normalization expects " +
                       std::to_string(sensors));
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / branch_scale;
  }

  bool operator==(const NormalizationMeta&) const = default;
};

struct NormalizationOptions {
  double coord_gain = 20.0;
};

struct CorpusEntry {
  SourceSpec spec;
  SensorVector sensors;
  FluxField flux;

  bool operator==(const CorpusEntry&) const = default;
};

struct Corpus {
  SensorGrid sensor_grid;
  TallyGrid tally_grid;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  NormalizationMeta norm;
  std::vector<CorpusEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool operator==(const Corpus&) const = default;
};

// Substream tags under the corpus seed.
namespace stream_tag {
inline constexpr std::uint64_t spec = 1;
inline constexpr std::uint64_t simulation = 2;
inline constexpr std::uint64_t split = 3;
inline constexpr std::uint64_t subset = 4;
}  // namespace stream_tag

struct CorpusOptions {
  SourceRanges ranges{};
  unsigned threads = 0;
  std::uint64_t config_hash = 0;
};

/// Samples n sources, discretizes them on the sensor grid, and simulates each
/// one. Entry i gets spec_id i + 1 and its own spec and simulation
/// substreams, so the result depends only on (seed, inputs).
inline Corpus generate_corpus(std::size_t n, std::uint64_t seed, const MazeGeometry& geo,
                              const MaterialTable& mats, const SensorGrid& sensor_grid,
                              const TallyGrid& tally_grid, const RunPlan& plan, const CorpusOptions& opts = {}) {
  if (n < 2) throw ConfigError("generate_corpus: need at least 2 functions");
  sensor_grid.validate();
  tally_grid.validate();
  plan.validate();
  opts.ranges.validate();

  Corpus c;
  c.sensor_grid = sensor_grid;
  c.tally_grid = tally_grid;
  c.seed = seed;
  c.config_hash = opts.config_hash;
  c.entries.resize(n);

  const RngStream spec_root = RngStream(seed, stream_tag::spec);
  const RngStream sim_root = RngStream(seed, stream_tag::simulation);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng = spec_root.substream(i);
    CorpusEntry& e = c.entries[i];
    e.spec = sample_source_spec(rng, opts.ranges);
    e.spec.id = i + 1;
    e.sensors = discretize_source(e.spec, sensor_grid);
  }
  parallel_for(n, opts.threads, [&](std::size_t i) {
    RunPlan p = plan;
    p.seed = sim_root.substream(i).next_u64();
    try {
      c.entries[i].flux = simulate_flux(geo, mats, c.entries[i].spec, tally_grid, p, 1);
    } catch (const std::exception& ex) {
      throw SimulationError(ex.what(), i);
    }
  });
  return c;
}

/// Fits target, branch, and coordinate conditioning on a training corpus.
inline NormalizationMeta fit_normalization(const Corpus& train, const NormalizationOptions& opt = {}) {
  if (train.entries.empty()) throw ConfigError("fit_normalization: empty training corpus");
  if (!(opt.coord_gain > 0.0)) throw ConfigError("fit_normalization: coord_gain must be positive");
  NormalizationMeta m;
  m.fitted = true;

  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& e : train.entries)
    for (double v : e.flux.values) {
      sum += v;
      ++count;
    }
  m.target_mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (const auto& e : train.entries)
    for (double v : e.flux.values) ss += (v - m.target_mean) * (v - m.target_mean);
  const double var = ss / static_cast<double>(count);
  m.target_std = var > 1e-300 ? std::sqrt(var) : 1.0;

  m.sensors = train.sensor_grid.count;
  double peak = 0.0;
  for (const auto& e : train.entries) {
    if (e.sensors.values.size() != m.sensors) throw ShapeError("fit_normalization: sensor count mismatch");
    for (double v : e.sensors.values) peak = std::max(peak, std::abs(v));
  }
  m.branch_scale = peak > 0.0 ? peak : 1.0;

  const TallyGrid& g = train.tally_grid;
  m.coord_min = {g.center_x(0), g.center_y(0)};
  m.coord_max = {g.center_x(g.nx - 1), g.center_y(g.ny - 1)};
  m.coord_gain = opt.coord_gain;
  return m;
}

struct SplitCorpus {
  Corpus train;
  Corpus test;
};

/// Function-level split. Test receives floor(n / 5) functions, train the
/// rest; both carry normalization fitted on train.
inline SplitCorpus split_functions(const Corpus& corpus, std::uint64_t seed, const NormalizationOptions& norm = {}) {
  const std::size_t n = corpus.size();
  if (n < 5) throw ConfigError("split_functions: corpus needs at least 5 functions");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng(seed, stream_tag::split);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

  const std::size_t n_test = n / 5;
  std::vector<std::size_t> train_idx(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> test_idx(perm.end() - static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  SplitCorpus s;
  for (Corpus* part : {&s.train, &s.test}) {
    part->sensor_grid = corpus.sensor_grid;
    part->tally_grid = corpus.tally_grid;
    part->seed = corpus.seed;
    part->config_hash = corpus.config_hash;
  }
  for (std::size_t i : train_idx) s.train.entries.push_back(corpus.entries[i]);
  for (std::size_t i : test_idx) s.test.entries.push_back(corpus.entries[i]);
  s.train.norm = fit_normalization(s.train, norm);
  s.test.norm = s.train.norm;
  return s;
}

/// Per-entry cell index lists (sorted, unique) for one training set.
struct PointSubset {
  double fraction = 1.0;
  std::vector<std::vector<std::uint32_t>> indices;
};

inline constexpr std::array<double, 5> kSubsetFractions{0.5, 0.6, 0.7, 0.8, 0.9};

/// Points kept per function: floor(fraction * cells), exact for the menu.
inline std::size_t subset_size(double fraction, std::size_t cells) {
  for (double f : kSubsetFractions) {
    if (std::abs(f - fraction) < 1e-9) {
      const std::size_t tenths = static_cast<std::size_t>(std::llround(f * 10.0));
      return tenths * cells / 10;
    }
  }
  throw ConfigError("subset fraction " + std::to_string(fraction) + " is not one of 0.5, 0.6, 0.7, 0.8, 0.9");
}

/// Independent uniform draw without replacement per entry. The stream is
/// keyed by spec_id so an entry's subset does not depend on which view it
/// appears in.
inline PointSubset subsample_points(const Corpus& view, double fraction, std::uint64_t seed) {
  const std::size_t cells = view.tally_grid.cells();
  const std::size_t keep = subset_size(fraction, cells);
  PointSubset s;
  s.fraction = fraction;
  s.indices.reserve(view.size());
  const RngStream root(seed, stream_tag::subset);
  std::vector<std::uint32_t> pool(cells);
  for (const auto& e : view.entries) {
    RngStream rng = root.substream(e.spec.id);
    std::iota(pool.begin(), pool.end(), 0u);
    for (std::size_t i = 0; i < keep; ++i) std::swap(pool[i], pool[i + rng.below(cells - i)]);
    std::vector<std::uint32_t> pick(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(pick.begin(), pick.end());
    s.indices.push_back(std::move(pick));
  }
  return s;
}

/// One (branch input, trunk point, target) triple. branch_input views the
/// raw sensor vector owned by the sample set; trunk_point is the cell
/// center in cm; target is the transformed flux.
struct OperatorSample {
  std::span<const double> branch_input;
  std::array<double, 2> trunk_point;
  double target;
  std::uint64_t spec_id;
};

/// All samples of one function, stored function-major.
struct FunctionSamples {
  std::uint64_t spec_id = 0;
  std::vector<double> branch_input;
  std::vector<std::array<double, 2>> points;
  std::vector<double> targets;
  std::vector<std::uint32_t> cells;
};

struct OperatorSampleSet {
  NormalizationMeta norm;
  TallyGrid grid;
  std::vector<FunctionSamples> functions;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& f : functions) n += f.targets.size();
    return n;
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    for (const auto& f : functions)
      for (std::size_t j = 0; j < f.targets.size(); ++j)
        fn(OperatorSample{f.branch_input, f.points[j], f.targets[j], f.spec_id});
  }
};

/// Builds the operator-learning triples for every entry, over all cells or
/// over the cells selected by `subset`.
inline OperatorSampleSet assemble_operator_samples(const Corpus& view, const PointSubset* subset = nullptr) {
  if (!view.norm.fitted) throw ConfigError("assemble_operator_samples: corpus has no fitted normalization");
  if (subset && subset->indices.size() != view.size())
    throw ShapeError("assemble_operator_samples: subset does not match corpus");
  const TallyGrid& g = view.tally_grid;
  OperatorSampleSet set;
  set.norm = view.norm;
  set.grid = g;
  set.functions.reserve(view.size());
  for (std::size_t k = 0; k < view.size(); ++k) {
    const CorpusEntry& e = view.entries[k];
    if (!(e.flux.grid == g)) throw ShapeError("assemble_operator_samples: entry grid differs from corpus grid");
    FunctionSamples fs;
    fs.spec_id = e.spec.id;
    fs.branch_input = e.sensors.values;
    if (subset) {
      fs.cells = subset->indices[k];
    } else {
      fs.cells.resize(g.cells());
      std::iota(fs.cells.begin(), fs.cells.end(), 0u);
    }
    fs.points.reserve(fs.cells.size());
    fs.targets.reserve(fs.cells.size());
    for (std::uint32_t c : fs.cells) {
      const std::size_t ix = c % g.nx;
      const std::size_t iy = c / g.nx;
      fs.points.push_back({g.center_x(ix), g.center_y(iy)});
      fs.targets.push_back(view.norm.transform_target(e.flux.values[c]));
    }
    set.functions.push_back(std::move(fs));
  }
  return set;
}

/// Picks the entries of `view` whose spec_id is in `ids`, preserving order.
inline Corpus select_entries(const Corpus& view, std::span<const std::uint64_t> ids) {
  Corpus out = view;
  out.entries.clear();
  for (std::uint64_t id : ids) {
    auto it = std::find_if(view.entries.begin(), view.entries.end(), [&](const CorpusEntry& e) { return e.spec.id == id; });
    if (it == view.entries.end()) throw ConfigError("select_entries: unknown spec_id " + std::to_string(id));
    out.entries.push_back(*it);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset container. Payload layout, version 1 (little-endian):
//   u64 config_hash, u64 seed
//   sensor grid: u8 axis, u64 count, f64 lo, f64 hi
//   tally grid:  u64 nx, u64 ny, f64 x_lo, x_hi, y_lo, y_hi, normalization
//   normalization: u8 fitted, f64 target mean, f64 target std, u64 sensors,
//                  f64 branch scale, f64 coord_min[2], f64 coord_max[2], f64 coord gain
//   u64 entry count, then per entry:
//     u64 spec_id, f64 energy, f64 mu[3], f64 sigma[3]
//     f64[] sensors
//     u64 flux seed, u64 capped histories, f64[] values, f64[] rel_error
// f64[] is a u64 length followed by that many doubles.

inline constexpr std::string_view kDatasetMagic = "FXOPDATA";
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void put_norm(ByteWriter& w, const NormalizationMeta& m) {
  w.u8(m.fitted ? 1 : 0);
  w.f64(m.target_mean);
  w.f64(m.target_std);
  w.u64(m.sensors);
  w.f64(m.branch_scale);
  for (double v : m.coord_min) w.f64(v);
  for (double v : m.coord_max) w.f64(v);
  w.f64(m.coord_gain);
}

inline NormalizationMeta get_norm(ByteReader& r) {
  NormalizationMeta m;
  m.fitted = r.u8() != 0;
  m.target_mean = r.f64();
  m.target_std = r.f64();
  m.sensors = r.u64();
  m.branch_scale = r.f64();
  for (double& v : m.coord_min) v = r.f64();
  for (double& v : m.coord_max) v = r.f64();
  m.coord_gain = r.f64();
  return m;
}

inline void put_tally_grid(ByteWriter& w, const TallyGrid& g) {
  w.u64(g.nx);
  w.u64(g.ny);
  w.f64(g.x_lo);
  w.f64(g.x_hi);
  w.f64(g.y_lo);
  w.f64(g.y_hi);
  w.f64(g.normalization);
}

inline TallyGrid get_tally_grid(ByteReader& r) {
  TallyGrid g;
  g.nx = r.u64();
  g.ny = r.u64();
  g.x_lo = r.f64();
  g.x_hi = r.f64();
  g.y_lo = r.f64();
  g.y_hi = r.f64();
  g.normalization = r.f64();
  return g;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const Corpus& c) {
  ByteWriter w;
  w.u64(c.config_hash);
  w.u64(c.seed);
  w.u8(static_cast<std::uint8_t>(c.sensor_grid.axis));
  w.u64(c.sensor_grid.count);
  w.f64(c.sensor_grid.lo);
  w.f64(c.sensor_grid.hi);
  detail::put_tally_grid(w, c.tally_grid);
  detail::put_norm(w, c.norm);
  w.u64(c.entries.size());
  for (const auto& e : c.entries) {
    w.u64(e.spec.id);
    w.f64(e.spec.energy_mev);
    for (double v : e.spec.mu) w.f64(v);
    for (double v : e.spec.sigma) w.f64(v);
    w.f64s(e.sensors.values);
    w.u64(e.flux.seed);
    w.u64(e.flux.capped_histories);
    w.f64s(e.flux.values);
    w.f64s(e.flux.rel_error);
  }
  return wrap_container(kDatasetMagic, kDatasetVersion, w.buffer());
}

inline Corpus decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(unwrap_container(bytes, kDatasetMagic, kDatasetVersion));
  Corpus c;
  c.config_hash = r.u64();
  c.seed = r.u64();
  const std::uint8_t axis = r.u8();
  if (axis > 1) throw FormatError("dataset: bad sensor axis");
  c.sensor_grid.axis = static_cast<Axis>(axis);
  c.sensor_grid.count = r.u64();
  c.sensor_grid.lo = r.f64();
  c.sensor_grid.hi = r.f64();
  c.tally_grid = detail::get_tally_grid(r);
  c.norm = detail::get_norm(r);
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw FormatError("dataset: implausible entry count");
  c.entries.resize(n);
  for (auto& e : c.entries) {
    e.spec.id = r.u64();
    e.spec.energy_mev = r.f64();
    for (double& v : e.spec.mu) v = r.f64();
    for (double& v : e.spec.sigma) v = r.f64();
    e.sensors.values = r.f64s();
    e.sensors.spec_id = e.spec.id;
    e.flux.grid = c.tally_grid;
    e.flux.spec_id = e.spec.id;
    e.flux.seed = r.u64();
    e.flux.capped_histories = r.u64();
    e.flux.values = r.f64s();
    e.flux.rel_error = r.f64s();
    if (e.sensors.values.size() != c.sensor_grid.count || e.flux.values.size() != c.tally_grid.cells() ||
        e.flux.rel_error.size() != c.tally_grid.cells())
      throw FormatError("dataset: entry arrays do not match the declared grids");
  }
  if (r.remaining() != 0) throw FormatError("dataset: unread bytes after last entry");
  return c;
}

inline void write_dataset(const Corpus& c, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dataset(c));
}

inline Corpus read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace fluxop
