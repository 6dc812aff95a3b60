// Acceptance driver. Runs the desk pipeline twice through the CLI plus a set
// of in-process checks, and prints one PASS/FAIL line per criterion.
//
//   fluxop_acceptance [--work-dir DIR] [--config FILE] [--report]
//
// Exit status is 0 when every criterion passes. With --report it is 0 as
// long as every criterion could be evaluated, so that known failures are
// reported without failing the test run.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fluxop/fluxop.hpp"

namespace fs = std::filesystem;
using namespace fluxop;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// CLI runs

struct Runner {
  fs::path config;
  fs::path work;

  // Runs one subcommand with --out dir, appending stdout/stderr to dir.log.
  double run(const std::string& sub, const fs::path& dir) const {
    const std::string cmd = std::string("\"") + FLUXOP_CLI_PATH + "\" " + sub + " -c \"" + config.string() +
                            "\" --out \"" + dir.string() + "\" >> \"" + dir.string() + ".log\" 2>&1";
    const auto t0 = Clock::now();
    const int status = std::system(cmd.c_str());
    const double dt = seconds_since(t0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw std::runtime_error("'" + sub + "' failed for " + dir.string() + ", see " + dir.string() + ".log");
    return dt;
  }
};

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Criterion 1

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  const GradCheckOptions opt;
  const GradCheckReport r = run_gradcheck(opt);
  const double dt = seconds_since(t0);
  std::map<std::string, std::size_t> per_target;
  for (const auto& p : r.probes) ++per_target[p.target];
  std::string targets;
  for (const auto& [t, n] : per_target) targets += " " + t + ":" + std::to_string(n);
  const bool all_targets = per_target.size() == 5;
  return {r.passed() && r.probes.size() >= 200 && all_targets && opt.h == 1e-5 && opt.tolerance == 1e-4 && dt < 60.0,
          fmt("%zu probes (%s ), %zu failures, max rel error %.2e, h %.0e, %.1f s", r.probes.size(), targets.c_str() + 1,
              r.failures, r.max_rel_error, opt.h, dt)};
}

// ---------------------------------------------------------------------------
// Criterion 2

struct Naive {
  double r2, rmse, mae;
};

Naive naive_metrics(const std::vector<double>& p, const std::vector<double>& t) {
  long double mean = 0;
  for (double v : t) mean += v;
  mean /= t.size();
  long double res = 0, tot = 0, ab = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const long double d = (long double)p[i] - t[i];
    res += d * d;
    tot += (t[i] - mean) * (t[i] - mean);
    ab += std::fabs(d);
  }
  return {double(1 - res / tot), double(std::sqrt(res / t.size())), double(ab / t.size())};
}

Outcome metric_oracle() {
  RngStream rng(20240601);
  double worst = 0.0;
  std::size_t order_violations = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 2 + rng.below(500);
    const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = scale * rng.normal(1.0, 1.0);
      p[i] = t[i] + scale * rng.normal(0.0, rng.uniform(0.001, 2.0));
    }
    const MetricsReport got = compute_metrics(p, t);
    const Naive want = naive_metrics(p, t);
    worst = std::max({worst, std::fabs(got.r2 - want.r2), std::fabs(got.rmse - want.rmse) / scale,
                      std::fabs(got.mae - want.mae) / scale});
    if (got.rmse < got.mae) ++order_violations;
  }
  const std::size_t n = 1000000;
  std::vector<double> p(n), t(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = rng.uniform(0.0, 100.0);
    p[i] = t[i] + rng.normal(0.0, 3.0);
  }
  const MetricsReport pooled = compute_metrics(p, t, MetricScope::aggregate);
  const double ratio = pooled.rmse_mae_ratio.value_or(0.0);
  const double target = std::sqrt(std::numbers::pi / 2.0);
  const double dev = std::fabs(ratio / target - 1.0);
  return {worst <= 1e-12 && order_violations == 0 && dev <= 0.02,
          fmt("1000 cases, max |diff| %.1e (scaled), RMSE < MAE in %zu, Gaussian RMSE/MAE %.4f vs %.4f (%.2f%%)", worst,
              order_violations, ratio, target, 100.0 * dev)};
}

// ---------------------------------------------------------------------------
// Criterion 3

// Length of the part of segment a -> b inside the box, by slab intersection.
// A segment lying on a cell edge belongs to the cell above or to the right of
// it, or to the last cell at the grid's upper edge (closed_hi).
double clipped_length(double ax, double ay, double bx, double by, double x0, double x1, double y0, double y1,
                      std::array<bool, 2> closed_hi) {
  double lo = 0.0, hi = 1.0;
  const double d[2] = {bx - ax, by - ay}, a[2] = {ax, ay}, mins[2] = {x0, y0}, maxs[2] = {x1, y1};
  for (int k = 0; k < 2; ++k) {
    if (d[k] == 0.0) {
      if (a[k] < mins[k] || a[k] > maxs[k] || (a[k] == maxs[k] && !closed_hi[k])) return 0.0;
      continue;
    }
    double t0 = (mins[k] - a[k]) / d[k], t1 = (maxs[k] - a[k]) / d[k];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  return hi > lo ? (hi - lo) * std::hypot(d[0], d[1]) : 0.0;
}

struct McResult {
  Outcome chords, scaling, point;
};

McResult monte_carlo_checks() {
  McResult out;
  const MazeGeometry maze = build_maze(MazeConfig::standard());
  TallyGrid g;
  g.nx = g.ny = 16;

  {
    // Fixed rays in vacuum: axis-aligned, diagonal, along grid lines, and
    // a deterministic fan; every ray runs to the domain edge.
    std::vector<std::array<double, 4>> rays{{0, 0, 1, 0},   {0, 0, 0, 1},   {20, 20, -1, 0}, {20, 20, 0, -1},
                                            {-8, -8, 1, 1}, {4, 30, 1, -1}, {-12, 0, 1, 0},  {0, 52, 0, -1},
                                            {20, 4, 3, 4}};
    RngStream rng(99);
    for (int k = 0; k < 40; ++k) {
      const double phi = 2.0 * std::numbers::pi * rng.uniform();
      rays.push_back({rng.uniform(-11.0, 51.0), rng.uniform(-11.0, 51.0), std::cos(phi), std::sin(phi)});
    }
    const Rect& d = maze.domain();
    double worst = 0.0;
    for (auto [x, y, ux, uy] : rays) {
      const double norm = std::hypot(ux, uy);
      ux /= norm;
      uy /= norm;
      double t = INFINITY;
      if (ux > 0) t = std::min(t, (d.x1 - x) / ux);
      if (ux < 0) t = std::min(t, (d.x0 - x) / ux);
      if (uy > 0) t = std::min(t, (d.y1 - y) / uy);
      if (uy < 0) t = std::min(t, (d.y0 - y) / uy);
      Birth b;
      b.position = {x, y};
      TallyAccumulator acc(g);
      RngStream unused(0);
      transport_history(maze, MaterialTable::vacuum(), b, Direction{ux, uy}, unused, acc);
      for (std::size_t iy = 0; iy < g.ny; ++iy)
        for (std::size_t ix = 0; ix < g.nx; ++ix) {
          const double cx = g.x_lo + ix * g.dx(), cy = g.y_lo + iy * g.dy();
          const double want = clipped_length(x, y, x + t * ux, y + t * uy, cx, cx + g.dx(), cy, cy + g.dy(),
                                             {ix + 1 == g.nx, iy + 1 == g.ny});
          worst = std::max(worst, std::fabs(acc.score[g.index(ix, iy)] - want));
        }
    }
    out.chords = {worst <= 1e-9, fmt("%zu rays, max |chord - oracle| %.1e", rays.size(), worst)};
  }

  {
    // 16x more histories should cut the typical relative error by 4x.
    const SourceSpec spec;
    const RunPlan small{2000, 10, 5};
    const RunPlan large{32000, 10, 6};
    const FluxField a = simulate_flux(maze, MaterialTable{}, spec, g, small);
    const FluxField b = simulate_flux(maze, MaterialTable{}, spec, g, large);
    std::vector<double> ea, eb;
    for (std::size_t c = 0; c < g.cells(); ++c)
      if (a.values[c] > 0.0 && b.values[c] > 0.0) {
        ea.push_back(a.rel_error[c]);
        eb.push_back(b.rel_error[c]);
      }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double ma = median(ea), mb = median(eb), ratio = ma / mb;
    out.scaling = {std::fabs(ratio / 4.0 - 1.0) <= 0.2,
                   fmt("median rel error %.4f at %zu, %.4f at %zu histories, ratio %.3f vs 4", ma, small.histories(),
                       mb, large.histories(), ratio)};
  }

  {
    // Isotropic point source in an empty vacuum box: track-length flux per
    // source particle at distance r is 1 / (2 pi r). Each cell is compared
    // with the cell average of that kernel.
    MazeConfig open;
    const MazeGeometry box = build_maze(open);
    TallyGrid pg;
    pg.nx = pg.ny = 32;
    SourceSpec spec;
    spec.mu = {20.0, 20.0, 0.0};
    spec.sigma = {0.0, 0.0, 0.0};
    spec.energy_mev = 1.0;
    const RunPlan plan{20000, 20, 7};
    const FluxField f = simulate_flux(box, MaterialTable::vacuum(), spec, pg, plan);

    constexpr int q = 64;
    const double nshells = 7;
    std::vector<double> sum(nshells, 0.0), var(nshells, 0.0), count(nshells, 0.0);
    for (std::size_t iy = 0; iy < pg.ny; ++iy)
      for (std::size_t ix = 0; ix < pg.nx; ++ix) {
        const double r = std::hypot(pg.center_x(ix) - 20.0, pg.center_y(iy) - 20.0);
        const int shell = static_cast<int>(std::floor((r - 4.0) / 4.0));
        if (r < 4.0 || shell >= nshells) continue;
        double kernel = 0.0;
        const double x0 = pg.x_lo + ix * pg.dx(), y0 = pg.y_lo + iy * pg.dy();
        for (int a = 0; a < q; ++a)
          for (int b = 0; b < q; ++b)
            kernel += 1.0 / std::hypot(x0 + (a + 0.5) * pg.dx() / q - 20.0, y0 + (b + 0.5) * pg.dy() / q - 20.0);
        kernel /= q * q;
        const double r_eff = 1.0 / kernel;
        const std::size_t c = pg.index(ix, iy);
        const double v = f.values[c] * 2.0 * std::numbers::pi * r_eff / pg.normalization;
        sum[shell] += v;
        var[shell] += std::pow(v * f.rel_error[c], 2);
        count[shell] += 1.0;
      }
    bool ok = true;
    double worst_z = 0.0;
    std::string shells;
    for (int s = 0; s < nshells; ++s) {
      const double mean = sum[s] / count[s];
      const double se = std::sqrt(var[s]) / count[s];
      const double z = std::fabs(mean - 1.0) / se;
      worst_z = std::max(worst_z, z);
      ok = ok && z <= 3.0;
      shells += fmt(" %.4f", mean);
    }
    out.point = {ok, fmt("flux*2*pi*r_eff per shell r=4..32:%s (expect 1), max |z| %.2f", shells.c_str(), worst_z)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Criteria 4 to 8 from the CLI runs

struct Row1 {
  double fraction, r2_mean, rmse_mean, rmse_std;
};

Outcome table1_analogue(const fs::path& dir, const ExperimentConfig& cfg, double seconds) {
  std::vector<Row1> rows;
  for (const auto& r : read_csv_rows(dir / "table1.csv"))
    rows.push_back({std::stod(r.at(1)), std::stod(r.at(3)), std::stod(r.at(5)), std::stod(r.at(6))});
  const auto find = [&](double f) -> const Row1* {
    for (const auto& r : rows)
      if (std::fabs(r.fraction - f) < 1e-9) return &r;
    return nullptr;
  };
  const Row1 *lo = find(0.5), *hi = find(0.9);
  const bool scale_ok = cfg.functions == 200 && cfg.tally.nx == 16 && cfg.tally.ny == 16 &&
                        cfg.run_plan.histories() == 20000 && lo && hi;
  if (!scale_ok) return {false, "config is not the desk scale (200 functions, 16x16, 2e4 histories, 50% and 90%)"};
  bool r2_ok = true;
  std::string r2s;
  for (const auto& r : rows) {
    r2_ok = r2_ok && r.r2_mean >= 0.95;
    r2s += fmt(" %.0f%%:%.4f", 100 * r.fraction, r.r2_mean);
  }
  const bool trend = hi->rmse_mean <= lo->rmse_mean + lo->rmse_std;
  return {r2_ok && trend, fmt("mean R2%s; RMSE 90%% %.4g <= 50%% %.4g + %.4g: %s; pipeline %.1f min", r2s.c_str(),
                              hi->rmse_mean, lo->rmse_mean, lo->rmse_std, trend ? "yes" : "no", seconds / 60.0)};
}

Outcome table2_analogue(const fs::path& dir) {
  std::map<std::string, double> worst;
  std::string spec;
  for (const auto& r : read_csv_rows(dir / "table2.csv"))
    if (r.at(0) == "worst") {
      worst[r.at(2)] = std::stod(r.at(3));
      spec = r.at(1);
    }
  if (worst.size() != 3) return {false, "table2.csv has no complete worst case"};
  const double d = worst["deeponet"], f = worst["fcn"], c = worst["cnn"];
  const double margin = d - std::max(f, c);
  return {margin >= 0.1, fmt("worst function %s: R2 DeepONet %.4f, FCN %.4f, CNN %.4f, margin %.4f (need 0.1)",
                             spec.c_str(), d, f, c, margin)};
}

Outcome speed_ratio(const fs::path& dir) {
  std::ifstream in(dir / "timing.txt");
  std::string key, line;
  double sim = 0, inf = 0, ratio = 0;
  while (std::getline(in, line)) {
    std::istringstream s(line);
    s >> key;
    if (key == "ratio") s >> ratio;
    if (key == "simulation_seconds") s >> sim;
    if (key == "inference_seconds") s >> inf;
  }
  if (!(ratio > 0)) return {false, "timing.txt has no ratio"};
  return {ratio >= 100.0, fmt("simulation %.4g s, inference %.3g s, ratio %.0fx (need 100x)", sim, inf, ratio)};
}

std::vector<fs::path> artefacts(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "timing.txt") out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome determinism(const fs::path& a, const fs::path& b) {
  const auto fa = artefacts(a), fb = artefacts(b);
  if (fa != fb) return {false, fmt("file sets differ (%zu vs %zu files)", fa.size(), fb.size())};
  std::string differ;
  std::size_t bytes = 0;
  for (const auto& rel : fa) {
    const auto x = read_file_bytes(a / rel), y = read_file_bytes(b / rel);
    bytes += x.size();
    if (x != y) differ += " " + rel.string();
  }
  const bool has_core = std::count(fa.begin(), fa.end(), fs::path("dataset.bin")) &&
                        std::count(fa.begin(), fa.end(), fs::path("checkpoints/set1.ckpt")) &&
                        std::count(fa.begin(), fa.end(), fs::path("table1.csv"));
  if (!differ.empty()) return {false, "differ:" + differ};
  return {has_core, fmt("%zu files, %zu bytes identical (dataset, checkpoints, CSVs, field dumps)", fa.size(), bytes)};
}

Outcome round_trips(const fs::path& dir, const ExperimentConfig& cfg) {
  std::string why;
  // Dataset: decode then encode reproduces the file.
  for (const char* name : {"dataset.bin", "train.bin", "test.bin"}) {
    const auto bytes = read_file_bytes(dir / name);
    const Corpus c = decode_dataset(bytes);
    if (encode_dataset(c) != bytes) why += std::string(" ") + name + " re-encode differs;";
    if (decode_dataset(encode_dataset(c)) != c) why += std::string(" ") + name + " decode differs;";
  }
  // Checkpoints: same, and the reloaded model reproduces the metrics table1
  // computed from the in-memory model, digit for digit.
  const Corpus test = read_dataset(dir / "test.bin");
  std::map<std::string, std::vector<std::string>> recorded;
  for (const auto& r : read_csv_rows(dir / "table1_per_function.csv")) recorded[r.at(0)].push_back(r.at(2));
  std::size_t compared = 0;
  for (std::size_t k = 0; k < cfg.subsets.size(); ++k) {
    const fs::path p = dir / "checkpoints" / ("set" + std::to_string(k + 1) + ".ckpt");
    const auto bytes = read_file_bytes(p);
    const Checkpoint ck = decode_checkpoint(bytes);
    if (encode_checkpoint(ck) != bytes) why += " " + p.filename().string() + " re-encode differs;";
    const auto& m = std::get<DeepONetModel>(ck.model);
    const Checkpoint again = decode_checkpoint(encode_checkpoint(ck));
    const auto& m2 = std::get<DeepONetModel>(again.model);
    const auto reports = evaluate_corpus(m, test, cfg.threads);
    const auto& want = recorded[set_label(k)];
    if (want.size() != reports.size()) why += " per-function row count differs;";
    for (std::size_t i = 0; i < reports.size() && i < want.size(); ++i, ++compared)
      if (detail::g17(reports[i].r2) != want[i]) {
        why += " " + set_label(k) + " R2 differs after reload;";
        break;
      }
    const auto& e = test.entries.front();
    if (predict_field(m, e.sensors.values, test.tally_grid) != predict_field(m2, e.sensors.values, test.tally_grid))
      why += " predictions differ after re-decode;";
  }
  // Baseline checkpoints, in process.
  const Corpus one = select_entries(test, std::vector<std::uint64_t>{test.entries.front().spec.id});
  const OperatorSampleSet data = assemble_operator_samples(one);
  TrainConfig short_run = cfg.baseline_train;
  short_run.iterations = 50;
  const auto fcn = train_fcn(data, short_run, cfg.fcn_hidden);
  const auto cnn = train_cnn(data, short_run, cfg.cnn);
  const auto& e = one.entries.front();
  for (const AnyModel& model : {AnyModel(fcn.model), AnyModel(cnn.model)}) {
    const Checkpoint back = decode_checkpoint(encode_checkpoint(Checkpoint{model, {}, cfg.hash()}));
    const auto before = std::visit([&](auto& m) { return predict_field(m, e.sensors.values, one.tally_grid); }, model);
    const auto after =
        std::visit([&](auto& m) { return predict_field(m, e.sensors.values, one.tally_grid); }, back.model);
    if (before != after || back.config_hash != cfg.hash()) why += " baseline checkpoint round trip differs;";
  }
  if (!why.empty()) return {false, why};
  return {compared > 0, fmt("3 datasets and %zu checkpoints re-encode bytewise; %zu per-function R2 values reproduced "
                            "after reload; FCN/CNN predictions bitwise after reload",
                            cfg.subsets.size(), compared)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fluxop acceptance suite"};
  fs::path work = "acceptance";
  fs::path config = fs::path(FLUXOP_SOURCE_DIR) / "configs" / "desk.json";
  bool report = false;
  app.add_option("--work-dir", work, "scratch directory for the two pipeline runs");
  app.add_option("--config", config, "desk config")->check(CLI::ExistingFile);
  app.add_flag("--report", report, "exit 0 when every criterion was evaluated, even if some failed");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<std::string, Outcome>> results;
  bool evaluated = true;
  auto record = [&](const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("not evaluated: ") + e.what()};
      evaluated = false;
    }
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, o);
  };

  record("1 gradient integrity", gradient_integrity);
  record("2 metric oracle", metric_oracle);
  {
    const auto t0 = Clock::now();
    McResult mc;
    std::string error;
    try {
      mc = monte_carlo_checks();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double dt = seconds_since(t0);
    auto check = [&](const Outcome& o) {
      if (!error.empty()) throw std::runtime_error(error);
      return Outcome{o.pass && dt < 300.0, o.detail + fmt(" [%.1f s]", dt)};
    };
    record("3a vacuum chords", [&] { return check(mc.chords); });
    record("3b error scaling", [&] { return check(mc.scaling); });
    record("3c point source", [&] { return check(mc.point); });
  }

  const ExperimentConfig cfg = load_config(config);
  const Runner runner{config, work};
  // Different name lengths give the two runs different heap layouts.
  const fs::path a = work / "run_a", b = work / "run_b_second_pass";
  double table1_seconds = 0.0;
  std::string pipeline_error;
  try {
    for (const fs::path& d : {a, b}) {
      fs::remove_all(d);
      fs::remove(fs::path(d.string() + ".log"));
      fs::create_directories(d);
      double t = 0.0;
      for (const char* sub : {"generate", "split", "table1"}) t += runner.run(sub, d);
      if (d == a) table1_seconds = t;
      runner.run("table2", d);
    }
    runner.run("timing", a);
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  auto guarded = [&](std::function<Outcome()> f) {
    return [&, f] {
      if (!pipeline_error.empty()) throw std::runtime_error(pipeline_error);
      return f();
    };
  };
  record("4 desk table 1", guarded([&] { return table1_analogue(a, cfg, table1_seconds); }));
  record("5 worst-case margin", guarded([&] { return table2_analogue(a); }));
  record("6 speed ratio", guarded([&] { return speed_ratio(a); }));
  record("7 determinism", guarded([&] { return determinism(a, b); }));
  record("8 round trips", guarded([&] { return round_trips(a, cfg); }));

  const auto passed = std::count_if(results.begin(), results.end(), [](auto& r) { return r.second.pass; });
  std::printf("%zu/%zu criteria passed\n", static_cast<std::size_t>(passed), results.size());
  if (report) return evaluated ? 0 : 1;
  return passed == static_cast<long>(results.size()) ? 0 : 1;
}
