#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fluxop/binary_io.hpp"
#include "fluxop/dataset.hpp"
#include "fluxop/error.hpp"
#include "fluxop/geometry.hpp"
#include "fluxop/models.hpp"
#include "fluxop/source_model.hpp"
#include "fluxop/tally.hpp"
#include "fluxop/training.hpp"
#include "fluxop/transport.hpp"

namespace fluxop {

using Json = nlohmann::json;

/// Environment variable that overrides the configured output directory.
inline constexpr const char* kOutputDirEnv = "FLUXOP_OUT";

/// Everything an end-to-end run depends on. Library defaults are the full
/// scale setup; configs/desk.json holds the reduced one.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "out";

  std::size_t functions = 1900;
  unsigned threads = 0;
  SourceRanges source;
  SensorGrid sensors;
  TallyGrid tally;
  RunPlan run_plan;
  MazeConfig maze = MazeConfig::standard();
  MaterialTable materials;
  NormalizationOptions normalization;

  std::vector<double> subsets{0.5, 0.6, 0.7, 0.8, 0.9};

  DeepONetArch deeponet;
  TrainConfig deeponet_train;

  std::vector<std::size_t> fcn_hidden{64, 64, 64};
  CnnArch cnn;
  TrainConfig baseline_train;
  /// Fraction of the selected test function's cells the baselines see.
  double baseline_fraction = 0.5;

  std::size_t inference_repeats = 20;
  std::size_t simulation_repeats = 3;

  void validate() const;
  Json to_json() const;
  /// FNV-1a of the canonical JSON form without output_dir, so that moving
  /// the output does not change the hash.
  std::uint64_t hash() const;
};

namespace detail {

inline void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read_opt(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline std::vector<double> read_numbers(const Json& j, const std::string& where, std::size_t n) {
  std::vector<double> v;
  try {
    v = j.get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": expected an array of numbers");
  }
  if (v.size() != n) throw ConfigError(where + ": expected " + std::to_string(n) + " numbers");
  return v;
}

inline Json rect_json(const Rect& r) { return Json::array({r.x0, r.x1, r.y0, r.y1}); }

inline Rect read_rect(const Json& j, const std::string& where) {
  const auto v = read_numbers(j, where, 4);
  return {v[0], v[1], v[2], v[3]};
}

inline Json train_json(const TrainConfig& t) {
  return {{"iterations", t.iterations},
          {"lr", t.lr},
          {"final_lr", t.final_lr},
          {"batch_functions", t.batch_functions},
          {"points_per_function", t.points_per_function},
          {"log_every", t.log_every}};
}

inline TrainConfig read_train(const Json& j, const std::string& where, TrainConfig t) {
  check_keys(j, where, {"iterations", "lr", "final_lr", "batch_functions", "points_per_function", "log_every"});
  read_opt(j, "iterations", t.iterations, where);
  read_opt(j, "lr", t.lr, where);
  read_opt(j, "final_lr", t.final_lr, where);
  read_opt(j, "batch_functions", t.batch_functions, where);
  read_opt(j, "points_per_function", t.points_per_function, where);
  read_opt(j, "log_every", t.log_every, where);
  return t;
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

inline Json material_json(const MaterialXS& m) {
  return {{"sigma_total", m.sigma_total}, {"scatter_prob", m.scatter_prob}};
}

inline MaterialXS read_material(const Json& j, const std::string& where, MaterialXS m) {
  check_keys(j, where, {"sigma_total", "scatter_prob"});
  read_opt(j, "sigma_total", m.sigma_total, where);
  read_opt(j, "scatter_prob", m.scatter_prob, where);
  return m;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (functions < 5) throw ConfigError("config: corpus needs at least 5 functions");
  source.validate();
  sensors.validate();
  tally.validate();
  run_plan.validate();
  materials.validate();
  build_maze(maze);
  if (!(normalization.coord_gain > 0.0)) throw ConfigError("config: coord_gain must be positive");
  if (subsets.empty()) throw ConfigError("config: subset menu is empty");
  for (double f : subsets) subset_size(f, tally.cells());
  deeponet_train.validate();
  baseline_train.validate();
  subset_size(baseline_fraction, tally.cells());
  if (fcn_hidden.empty()) throw ConfigError("config: fcn needs at least one hidden layer");
  if (inference_repeats == 0 || simulation_repeats == 0) throw ConfigError("config: timing repeats must be positive");
}

inline Json ExperimentConfig::to_json() const {
  Json walls = Json::array();
  for (const auto& w : maze.walls)
    walls.push_back({{"box", detail::rect_json(w.box)}, {"material", std::string(to_string(w.material))}});
  return {
      {"seed", seed},
      {"output_dir", output_dir},
      {"corpus",
       {{"functions", functions},
        {"threads", threads},
        {"source",
         {{"energy", {source.energy_lo, source.energy_hi}},
          {"mu_y", {source.mu_y_lo, source.mu_y_hi}},
          {"mu_x", source.mu_x},
          {"mu_z", source.mu_z},
          {"sigma", {source.sigma[0], source.sigma[1], source.sigma[2]}}}}}},
      {"sensors",
       {{"axis", sensors.axis == Axis::x ? "x" : "y"}, {"count", sensors.count}, {"lo", sensors.lo}, {"hi", sensors.hi}}},
      {"tally",
       {{"nx", tally.nx},
        {"ny", tally.ny},
        {"x", {tally.x_lo, tally.x_hi}},
        {"y", {tally.y_lo, tally.y_hi}},
        {"normalization", tally.normalization}}},
      {"run_plan", {{"particles_per_batch", run_plan.particles_per_batch}, {"batches", run_plan.batches}}},
      {"geometry",
       {{"domain", detail::rect_json(maze.domain)},
        {"background", std::string(to_string(maze.background))},
        {"walls", walls}}},
      {"materials", {{"air", detail::material_json(materials.air)}, {"concrete", detail::material_json(materials.concrete)}}},
      {"normalization", {{"coord_gain", normalization.coord_gain}}},
      {"subsets", subsets},
      {"deeponet",
       {{"branch_hidden", deeponet.branch_hidden},
        {"trunk_hidden", deeponet.trunk_hidden},
        {"activation", std::string(to_string(deeponet.activation))},
        {"train", detail::train_json(deeponet_train)}}},
      {"baselines",
       {{"fcn_hidden", fcn_hidden},
        {"cnn",
         {{"kernel", cnn.kernel},
          {"stride", cnn.stride},
          {"channels1", cnn.channels1},
          {"channels2", cnn.channels2},
          {"head_hidden", cnn.head_hidden}}},
        {"fraction", baseline_fraction},
        {"train", detail::train_json(baseline_train)}}},
      {"timing", {{"inference_repeats", inference_repeats}, {"simulation_repeats", simulation_repeats}}},
  };
}

inline std::uint64_t ExperimentConfig::hash() const {
  Json j = to_json();
  j.erase("output_dir");
  return fnv1a64(j.dump());
}

/// Parses a config object. Missing keys keep their defaults; unknown keys
/// and wrong types raise ConfigError.
inline ExperimentConfig config_from_json(const Json& j) {
  using namespace detail;
  ExperimentConfig c;
  check_keys(j, "config",
             {"seed", "output_dir", "corpus", "sensors", "tally", "run_plan", "geometry", "materials", "normalization",
              "subsets", "deeponet", "baselines", "timing"});
  read_opt(j, "seed", c.seed, "config");
  read_opt(j, "output_dir", c.output_dir, "config");

  if (j.contains("corpus")) {
    const Json& k = j["corpus"];
    check_keys(k, "corpus", {"functions", "threads", "source"});
    read_opt(k, "functions", c.functions, "corpus");
    read_opt(k, "threads", c.threads, "corpus");
    if (k.contains("source")) {
      const Json& s = k["source"];
      check_keys(s, "corpus.source", {"energy", "mu_y", "mu_x", "mu_z", "sigma"});
      if (s.contains("energy")) {
        const auto v = read_numbers(s["energy"], "corpus.source.energy", 2);
        c.source.energy_lo = v[0];
        c.source.energy_hi = v[1];
      }
      if (s.contains("mu_y")) {
        const auto v = read_numbers(s["mu_y"], "corpus.source.mu_y", 2);
        c.source.mu_y_lo = v[0];
        c.source.mu_y_hi = v[1];
      }
      read_opt(s, "mu_x", c.source.mu_x, "corpus.source");
      read_opt(s, "mu_z", c.source.mu_z, "corpus.source");
      if (s.contains("sigma")) {
        const auto v = read_numbers(s["sigma"], "corpus.source.sigma", 3);
        c.source.sigma = {v[0], v[1], v[2]};
      }
    }
  }
  if (j.contains("sensors")) {
    const Json& s = j["sensors"];
    check_keys(s, "sensors", {"axis", "count", "lo", "hi"});
    std::string axis = c.sensors.axis == Axis::x ? "x" : "y";
    read_opt(s, "axis", axis, "sensors");
    if (axis != "x" && axis != "y") throw ConfigError("sensors.axis: expected \"x\" or \"y\"");
    c.sensors.axis = axis == "x" ? Axis::x : Axis::y;
    read_opt(s, "count", c.sensors.count, "sensors");
    read_opt(s, "lo", c.sensors.lo, "sensors");
    read_opt(s, "hi", c.sensors.hi, "sensors");
  }
  if (j.contains("tally")) {
    const Json& t = j["tally"];
    check_keys(t, "tally", {"nx", "ny", "x", "y", "normalization"});
    read_opt(t, "nx", c.tally.nx, "tally");
    read_opt(t, "ny", c.tally.ny, "tally");
    if (t.contains("x")) {
      const auto v = read_numbers(t["x"], "tally.x", 2);
      c.tally.x_lo = v[0];
      c.tally.x_hi = v[1];
    }
    if (t.contains("y")) {
      const auto v = read_numbers(t["y"], "tally.y", 2);
      c.tally.y_lo = v[0];
      c.tally.y_hi = v[1];
    }
    read_opt(t, "normalization", c.tally.normalization, "tally");
  }
  if (j.contains("run_plan")) {
    const Json& r = j["run_plan"];
    check_keys(r, "run_plan", {"particles_per_batch", "batches"});
    read_opt(r, "particles_per_batch", c.run_plan.particles_per_batch, "run_plan");
    read_opt(r, "batches", c.run_plan.batches, "run_plan");
  }
  if (j.contains("geometry")) {
    const Json& g = j["geometry"];
    check_keys(g, "geometry", {"domain", "background", "walls"});
    if (g.contains("domain")) c.maze.domain = read_rect(g["domain"], "geometry.domain");
    if (g.contains("background")) {
      std::string b;
      read_opt(g, "background", b, "geometry");
      c.maze.background = material_from_string(b);
    }
    if (g.contains("walls")) {
      if (!g["walls"].is_array()) throw ConfigError("geometry.walls: expected an array");
      c.maze.walls.clear();
      for (const Json& w : g["walls"]) {
        check_keys(w, "geometry.walls[]", {"box", "material"});
        if (!w.contains("box")) throw ConfigError("geometry.walls[]: missing box");
        WallSpec ws;
        ws.box = read_rect(w["box"], "geometry.walls[].box");
        std::string m = "concrete";
        read_opt(w, "material", m, "geometry.walls[]");
        ws.material = material_from_string(m);
        c.maze.walls.push_back(ws);
      }
    }
  }
  if (j.contains("materials")) {
    const Json& m = j["materials"];
    check_keys(m, "materials", {"air", "concrete"});
    if (m.contains("air")) c.materials.air = read_material(m["air"], "materials.air", c.materials.air);
    if (m.contains("concrete"))
      c.materials.concrete = read_material(m["concrete"], "materials.concrete", c.materials.concrete);
  }
  if (j.contains("normalization")) {
    const Json& n = j["normalization"];
    check_keys(n, "normalization", {"coord_gain"});
    read_opt(n, "coord_gain", c.normalization.coord_gain, "normalization");
  }
  read_opt(j, "subsets", c.subsets, "config");
  if (j.contains("deeponet")) {
    const Json& d = j["deeponet"];
    check_keys(d, "deeponet", {"branch_hidden", "trunk_hidden", "activation", "train"});
    read_opt(d, "branch_hidden", c.deeponet.branch_hidden, "deeponet");
    read_opt(d, "trunk_hidden", c.deeponet.trunk_hidden, "deeponet");
    if (d.contains("activation")) {
      std::string a;
      read_opt(d, "activation", a, "deeponet");
      c.deeponet.activation = activation_from_string(a);
    }
    if (d.contains("train")) c.deeponet_train = read_train(d["train"], "deeponet.train", c.deeponet_train);
  }
  if (j.contains("baselines")) {
    const Json& b = j["baselines"];
    check_keys(b, "baselines", {"fcn_hidden", "cnn", "fraction", "train"});
    read_opt(b, "fcn_hidden", c.fcn_hidden, "baselines");
    read_opt(b, "fraction", c.baseline_fraction, "baselines");
    if (b.contains("cnn")) {
      const Json& k = b["cnn"];
      check_keys(k, "baselines.cnn", {"kernel", "stride", "channels1", "channels2", "head_hidden"});
      read_opt(k, "kernel", c.cnn.kernel, "baselines.cnn");
      read_opt(k, "stride", c.cnn.stride, "baselines.cnn");
      read_opt(k, "channels1", c.cnn.channels1, "baselines.cnn");
      read_opt(k, "channels2", c.cnn.channels2, "baselines.cnn");
      read_opt(k, "head_hidden", c.cnn.head_hidden, "baselines.cnn");
    }
    if (b.contains("train")) c.baseline_train = read_train(b["train"], "baselines.train", c.baseline_train);
  }
  if (j.contains("timing")) {
    const Json& t = j["timing"];
    check_keys(t, "timing", {"inference_repeats", "simulation_repeats"});
    read_opt(t, "inference_repeats", c.inference_repeats, "timing");
    read_opt(t, "simulation_repeats", c.simulation_repeats, "timing");
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

/// Reads a config file; the output directory may be overridden through
/// FLUXOP_OUT.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) c.output_dir = env;
  return c;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return s;
}

}  // namespace fluxop
