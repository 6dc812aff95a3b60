#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <sys/utsname.h>

#include "fluxop/checkpoint.hpp"
#include "fluxop/config.hpp"
#include "fluxop/dataset.hpp"
#include "fluxop/error.hpp"
#include "fluxop/field_io.hpp"
#include "fluxop/metrics.hpp"
#include "fluxop/models.hpp"
#include "fluxop/parallel.hpp"
#include "fluxop/training.hpp"
#include "fluxop/transport.hpp"

namespace fluxop {

// ---------------------------------------------------------------------------
// Pipeline stages

inline Corpus build_corpus(const ExperimentConfig& cfg) {
  const MazeGeometry geo = build_maze(cfg.maze);
  CorpusOptions opts;
  opts.ranges = cfg.source;
  opts.threads = cfg.threads;
  opts.config_hash = cfg.hash();
  return generate_corpus(cfg.functions, cfg.seed, geo, cfg.materials, cfg.sensors, cfg.tally, cfg.run_plan, opts);
}

inline SplitCorpus split_corpus(const ExperimentConfig& cfg, const Corpus& corpus) {
  return split_functions(corpus, cfg.seed, cfg.normalization);
}

inline TrainConfig seeded(TrainConfig t, std::uint64_t seed) {
  t.seed = seed;
  return t;
}

/// DeepONet on the `fraction` point subset of the training functions.
inline Trained<DeepONetModel> train_on_subset(const ExperimentConfig& cfg, const Corpus& train, double fraction) {
  const PointSubset subset = subsample_points(train, fraction, cfg.seed);
  const OperatorSampleSet set = assemble_operator_samples(train, &subset);
  return train_deeponet(set, seeded(cfg.deeponet_train, cfg.seed), cfg.deeponet);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  MetricsReport metrics;
  FluxField prediction;
};

/// Predicts every cell of `grid` for one corpus entry and scores it against
/// the simulated truth in raw flux units.
template <class Model>
Evaluation evaluate_on_function(const Model& model, const CorpusEntry& entry, const TallyGrid& grid) {
  if (!(entry.flux.grid == grid)) throw ShapeError("evaluate_on_function: entry grid differs from the dataset grid");
  if (entry.flux.values.size() != grid.cells()) throw ShapeError("evaluate_on_function: truth has wrong cell count");
  Evaluation ev;
  ev.prediction.grid = grid;
  ev.prediction.spec_id = entry.spec.id;
  ev.prediction.seed = entry.flux.seed;
  ev.prediction.values = predict_field(model, entry.sensors.values, grid);
  ev.metrics = compute_metrics(ev.prediction.values, entry.flux.values, MetricScope::per_function);
  return ev;
}

/// Per-function metrics over a corpus, in entry order.
template <class Model>
std::vector<MetricsReport> evaluate_corpus(const Model& model, const Corpus& corpus, unsigned threads = 0) {
  if (!(model.norm == corpus.norm)) throw ConfigError("evaluate: model normalization does not match the dataset");
  std::vector<MetricsReport> out(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    out[i] = evaluate_on_function(model, corpus.entries[i], corpus.tally_grid).metrics;
  });
  return out;
}

/// Mean wall-clock seconds of one full-field prediction, cycling through
/// the given entries.
template <class Model>
double inference_timing(const Model& model, const Corpus& corpus, std::size_t repeats) {
  if (corpus.entries.empty() || repeats == 0) throw ConfigError("inference_timing: nothing to time");
  double sink = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto& e = corpus.entries[r % corpus.size()];
    sink += predict_field(model, e.sensors.values, corpus.tally_grid).front();
  }
  const auto t1 = std::chrono::steady_clock::now();
  volatile double keep = sink;
  (void)keep;
  return std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(repeats);
}

// ---------------------------------------------------------------------------
// Tables

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

/// Mean and sample standard deviation (n - 1). Values are sorted first so
/// the result does not depend on input order.
inline MetricSummary summarize(std::vector<double> v) {
  MetricSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct BenchmarkRow {
  std::string label;
  double fraction = 0.0;
  std::size_t functions = 0;
  MetricSummary r2, rmse, mae, ratio;
};

inline BenchmarkRow summarize_row(std::string label, double fraction, const std::vector<MetricsReport>& reports) {
  BenchmarkRow row;
  row.label = std::move(label);
  row.fraction = fraction;
  row.functions = reports.size();
  std::vector<double> r2, rmse, mae, ratio;
  for (const auto& m : reports) {
    r2.push_back(m.r2);
    rmse.push_back(m.rmse);
    mae.push_back(m.mae);
    if (m.rmse_mae_ratio) ratio.push_back(*m.rmse_mae_ratio);
  }
  row.r2 = summarize(r2);
  row.rmse = summarize(rmse);
  row.mae = summarize(mae);
  row.ratio = summarize(ratio);
  return row;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string g17(double v) { return fmt("%.17g", v); }

inline std::string hash_line(std::uint64_t hash) { return "# config_hash " + hash_hex(hash) + "\n"; }

}  // namespace detail

/// Rows of (set, mean +- std of each metric over test functions).
struct BenchmarkTable {
  std::vector<BenchmarkRow> rows;
  std::uint64_t config_hash = 0;

  std::string csv() const {
    std::string s = detail::hash_line(config_hash);
    s += "# std is the sample standard deviation over test functions\n";
    s += "set,fraction,functions,r2_mean,r2_std,rmse_mean,rmse_std,mae_mean,mae_std,rmse_mae_mean,rmse_mae_std\n";
    for (const auto& r : rows) {
      s += r.label + "," + detail::g17(r.fraction) + "," + std::to_string(r.functions);
      for (const MetricSummary* m : {&r.r2, &r.rmse, &r.mae, &r.ratio})
        s += "," + detail::g17(m->mean) + "," + detail::g17(m->std);
      s += "\n";
    }
    return s;
  }

  std::string text() const {
    std::string s = "DeepONet test metrics, mean +- std over test functions (config " + hash_hex(config_hash) + ")\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-6s %6s %5s  %-19s %-19s %-19s %-15s\n", "set", "frac", "n", "R2", "RMSE", "MAE",
                  "RMSE/MAE");
    s += buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%-6s %6.2f %5zu  %8.4f +- %-7.4f %8.4g +- %-7.3g %8.4g +- %-7.3g %6.3f +- %-5.3f\n",
                    r.label.c_str(), r.fraction, r.functions, r.r2.mean, r.r2.std, r.rmse.mean, r.rmse.std,
                    r.mae.mean, r.mae.std, r.ratio.mean, r.ratio.std);
      s += buf;
    }
    return s;
  }
};

inline std::string set_label(std::size_t index) { return "Set" + std::to_string(index + 1); }

inline std::string per_function_csv(const std::vector<std::string>& labels, const std::vector<Corpus const*>& corpora,
                                    const std::vector<std::vector<MetricsReport>>& reports, std::uint64_t hash) {
  std::string s = detail::hash_line(hash);
  s += "set,spec_id,r2,rmse,mae,rmse_mae_ratio\n";
  for (std::size_t k = 0; k < reports.size(); ++k)
    for (std::size_t i = 0; i < reports[k].size(); ++i) {
      const MetricsReport& m = reports[k][i];
      s += labels[k] + "," + std::to_string(corpora[k]->entries[i].spec.id) + "," + detail::g17(m.r2) + "," +
           detail::g17(m.rmse) + "," + detail::g17(m.mae) + "," +
           (m.rmse_mae_ratio ? detail::g17(*m.rmse_mae_ratio) : std::string()) + "\n";
    }
  return s;
}

struct Table1Result {
  BenchmarkTable table;
  std::vector<Trained<DeepONetModel>> models;
  std::vector<std::vector<MetricsReport>> per_function;
};

/// One DeepONet per configured subset fraction, each scored on every test
/// function.
inline Table1Result run_table1_experiment(const ExperimentConfig& cfg, const SplitCorpus& split) {
  Table1Result out;
  out.table.config_hash = cfg.hash();
  for (std::size_t k = 0; k < cfg.subsets.size(); ++k) {
    const std::string label = set_label(k);
    Trained<DeepONetModel> t;
    try {
      t = train_on_subset(cfg, split.train, cfg.subsets[k]);
    } catch (const TrainingError& e) {
      throw TrainingError(label + ": " + e.what(), e.step());
    }
    auto reports = evaluate_corpus(t.model, split.test, cfg.threads);
    out.table.rows.push_back(summarize_row(label, cfg.subsets[k], reports));
    out.per_function.push_back(std::move(reports));
    out.models.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Best/worst comparison

struct CaseComparison {
  std::string label;  // "best" or "worst"
  std::uint64_t spec_id = 0;
  MetricsReport deeponet, fcn, cnn;
  FluxField truth;
  FluxField deeponet_field, fcn_field, cnn_field;
  Trained<FcnBaseline> fcn_model;
  Trained<CnnBaseline> cnn_model;
};

struct Table2Result {
  std::vector<CaseComparison> cases;
  std::uint64_t config_hash = 0;

  std::string csv() const {
    std::string s = detail::hash_line(config_hash);
    s += "case,spec_id,model,r2,rmse,mae,rmse_mae_ratio\n";
    for (const auto& c : cases)
      for (const auto& [name, m] : {std::pair<const char*, const MetricsReport*>{"deeponet", &c.deeponet},
                                    {"fcn", &c.fcn},
                                    {"cnn", &c.cnn}})
        s += c.label + "," + std::to_string(c.spec_id) + "," + name + "," + detail::g17(m->r2) + "," +
             detail::g17(m->rmse) + "," + detail::g17(m->mae) + "," +
             (m->rmse_mae_ratio ? detail::g17(*m->rmse_mae_ratio) : std::string()) + "\n";
    return s;
  }

  std::string text() const {
    std::string s = "Best and worst test functions by DeepONet R2 (config " + hash_hex(config_hash) + ")\n";
    char buf[256];
    for (const auto& c : cases) {
      std::snprintf(buf, sizeof buf, "%s case, spec_id %llu\n", c.label.c_str(),
                    static_cast<unsigned long long>(c.spec_id));
      s += buf;
      for (const auto& [name, m] : {std::pair<const char*, const MetricsReport*>{"DeepONet", &c.deeponet},
                                    {"FCN", &c.fcn},
                                    {"CNN", &c.cnn}}) {
        std::snprintf(buf, sizeof buf, "  %-9s R2 %8.4f  RMSE %10.4g  MAE %10.4g  RMSE/MAE %s\n", name, m->r2, m->rmse,
                      m->mae, m->rmse_mae_ratio ? detail::fmt("%.3f", *m->rmse_mae_ratio).c_str() : "undefined");
        s += buf;
      }
    }
    return s;
  }
};

/// Index of the smallest and largest value; ties go to the earlier entry.
inline std::pair<std::size_t, std::size_t> argmin_argmax(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("argmin_argmax: empty input");
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[lo]) lo = i;
    if (v[i] > v[hi]) hi = i;
  }
  return {lo, hi};
}

/// Trains FCN and CNN baselines on a `baseline_fraction` point subset of one
/// test function and scores all three models on its full grid.
inline CaseComparison compare_on_case(const ExperimentConfig& cfg, const DeepONetModel& deeponet, const Corpus& test,
                                      std::size_t index, std::string label) {
  CaseComparison c;
  c.label = std::move(label);
  const CorpusEntry& e = test.entries.at(index);
  c.spec_id = e.spec.id;
  const std::uint64_t id = e.spec.id;
  const Corpus one = select_entries(test, std::span<const std::uint64_t>(&id, 1));
  const PointSubset subset = subsample_points(one, cfg.baseline_fraction, cfg.seed);
  const OperatorSampleSet samples = assemble_operator_samples(one, &subset);
  const TrainConfig tc = seeded(cfg.baseline_train, cfg.seed);
  c.fcn_model = train_fcn(samples, tc, cfg.fcn_hidden);
  c.cnn_model = train_cnn(samples, tc, cfg.cnn);

  c.truth = e.flux;
  c.truth.rel_error.clear();
  Evaluation d = evaluate_on_function(deeponet, e, test.tally_grid);
  Evaluation f = evaluate_on_function(c.fcn_model.model, e, test.tally_grid);
  Evaluation k = evaluate_on_function(c.cnn_model.model, e, test.tally_grid);
  c.deeponet = d.metrics;
  c.fcn = f.metrics;
  c.cnn = k.metrics;
  c.deeponet_field = std::move(d.prediction);
  c.fcn_field = std::move(f.prediction);
  c.cnn_field = std::move(k.prediction);
  return c;
}

inline Table2Result run_table2_experiment(const ExperimentConfig& cfg, const DeepONetModel& set1,
                                          const Corpus& test) {
  const auto reports = evaluate_corpus(set1, test, cfg.threads);
  std::vector<double> r2;
  for (const auto& m : reports) r2.push_back(m.r2);
  const auto [worst, best] = argmin_argmax(r2);
  Table2Result out;
  out.config_hash = cfg.hash();
  out.cases.push_back(compare_on_case(cfg, set1, test, best, "best"));
  out.cases.push_back(compare_on_case(cfg, set1, test, worst, "worst"));
  return out;
}

/// Writes the comparison table and the truth/prediction field dumps.
inline void write_table2_outputs(const Table2Result& r, const std::filesystem::path& dir) {
  write_text_atomic(dir / "table2.csv", r.csv());
  write_text_atomic(dir / "table2.txt", r.text());
  for (const auto& c : r.cases) {
    const std::string stem = c.label + "_" + std::to_string(c.spec_id);
    write_field_csv(c.truth, dir / "fields" / (stem + "_truth.csv"), r.config_hash);
    write_field_csv(c.deeponet_field, dir / "fields" / (stem + "_deeponet.csv"), r.config_hash);
    write_field_csv(c.fcn_field, dir / "fields" / (stem + "_fcn.csv"), r.config_hash);
    write_field_csv(c.cnn_field, dir / "fields" / (stem + "_cnn.csv"), r.config_hash);
  }
}

// ---------------------------------------------------------------------------
// Timing

inline std::string machine_descriptor() {
  std::string s;
  utsname u{};
  if (uname(&u) == 0) s = std::string(u.sysname) + " " + u.release + " " + u.machine;
  s += ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
#if defined(__VERSION__)
  s += ", compiler " + std::string(__VERSION__);
#endif
  return s;
}

struct TimingReport {
  double simulation_seconds = 0.0;
  double inference_seconds = 0.0;
  double ratio = 0.0;
  double required_ratio = 100.0;
  std::size_t histories = 0;
  std::size_t cells = 0;
  std::string machine;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  bool passed() const { return ratio >= required_ratio; }

  std::string text() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "config_hash %s\nseed %llu\nmachine %s\nhistories_per_simulation %zu\ncells %zu\n"
                  "simulation_seconds %.6g\ninference_seconds %.6g\nratio %.6g\nrequired_ratio %.6g\nresult %s\n",
                  hash_hex(config_hash).c_str(), static_cast<unsigned long long>(seed), machine.c_str(), histories,
                  cells, simulation_seconds, inference_seconds, ratio, required_ratio, passed() ? "PASS" : "FAIL");
    return buf;
  }
};

/// Single-threaded simulation of representative sources against
/// single-threaded full-field inference on the test functions.
inline TimingReport run_timing_report(const ExperimentConfig& cfg, const DeepONetModel& model, const Corpus& test) {
  const MazeGeometry geo = build_maze(cfg.maze);
  TimingReport r;
  r.config_hash = cfg.hash();
  r.seed = cfg.seed;
  r.machine = machine_descriptor();
  r.histories = cfg.run_plan.histories();
  r.cells = cfg.tally.cells();
  double sim = 0.0;
  for (std::size_t i = 0; i < cfg.simulation_repeats; ++i) {
    const SourceSpec& spec = test.entries.at(i % test.size()).spec;
    RunPlan plan = cfg.run_plan;
    plan.seed = cfg.seed + i;
    sim += timing_probe(plan, geo, cfg.materials, spec, cfg.tally, 1);
  }
  r.simulation_seconds = sim / static_cast<double>(cfg.simulation_repeats);
  inference_timing(model, test, std::min<std::size_t>(3, cfg.inference_repeats));  // warm-up
  r.inference_seconds = inference_timing(model, test, cfg.inference_repeats);
  r.ratio = r.simulation_seconds / r.inference_seconds;
  return r;
}

}  // namespace fluxop
