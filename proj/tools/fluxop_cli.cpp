// fluxop command-line driver. Every subcommand reads the JSON config, writes
// below the output directory, and names the failing stage on error.

#include <cctype>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fluxop/fluxop.hpp"

namespace fs = std::filesystem;
using namespace fluxop;

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kConfig = 3, kInput = 4, kRuntime = 5, kGradcheck = 6 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t set = 0;
};

std::string g_stage = "startup";

void log(const std::string& msg) { std::fprintf(stderr, "[%s] %s\n", g_stage.c_str(), msg.c_str()); }

ExperimentConfig resolve_config(const Options& o) {
  g_stage = "config";
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  cfg.validate();
  log("config " + o.config + " hash " + hash_hex(cfg.hash()) + " seed " + std::to_string(cfg.seed) + " out " +
      cfg.output_dir);
  return cfg;
}

struct Paths {
  fs::path root;
  fs::path dataset() const { return root / "dataset.bin"; }
  fs::path train() const { return root / "train.bin"; }
  fs::path test() const { return root / "test.bin"; }
  fs::path checkpoint(std::size_t k) const { return root / "checkpoints" / (lower(set_label(k)) + ".ckpt"); }
  fs::path loss_log(std::size_t k) const { return root / "checkpoints" / (lower(set_label(k)) + "_loss.csv"); }

  static std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }
};

Corpus load_corpus(const fs::path& p, const char* hint) {
  if (!fs::exists(p)) throw InputError("missing '" + p.string() + "'; run '" + hint + "' first");
  return read_dataset(p);
}

void warn_hash(const char* what, std::uint64_t stored, const ExperimentConfig& cfg) {
  if (stored != cfg.hash())
    log(std::string("warning: ") + what + " was produced under config " + hash_hex(stored) + ", current is " +
        hash_hex(cfg.hash()));
}

std::vector<std::size_t> selected_sets(const ExperimentConfig& cfg, std::size_t set) {
  if (set > cfg.subsets.size())
    throw ConfigError("--set " + std::to_string(set) + " out of range, config has " +
                      std::to_string(cfg.subsets.size()) + " subsets");
  if (set != 0) return {set - 1};
  std::vector<std::size_t> all(cfg.subsets.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  return all;
}

std::string loss_csv(const TrainingLog& log, std::uint64_t hash) {
  std::string s = "# config_hash " + hash_hex(hash) + "\niteration,loss\n";
  char buf[64];
  for (const auto& [it, loss] : log.losses) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", it, loss);
    s += buf;
  }
  return s;
}

void save_model(const Paths& paths, std::size_t k, const Trained<DeepONetModel>& t, std::uint64_t hash) {
  write_checkpoint(Checkpoint{t.model, t.optimizer, hash}, paths.checkpoint(k));
  write_text_atomic(paths.loss_log(k), loss_csv(t.log, hash));
}

DeepONetModel load_model(const Paths& paths, std::size_t k, const ExperimentConfig& cfg) {
  const fs::path p = paths.checkpoint(k);
  if (!fs::exists(p)) throw InputError("missing '" + p.string() + "'; run 'train' or 'table1' first");
  Checkpoint ck = read_checkpoint(p);
  warn_hash(p.filename().c_str(), ck.config_hash, cfg);
  auto* m = std::get_if<DeepONetModel>(&ck.model);
  if (!m) throw FormatError("'" + p.string() + "' does not hold a DeepONet");
  return std::move(*m);
}

void write_table1(const Paths& paths, const ExperimentConfig& cfg, const BenchmarkTable& table,
                  const std::vector<std::size_t>& sets, const std::vector<std::vector<MetricsReport>>& reports,
                  const Corpus& test) {
  std::vector<std::string> labels;
  std::vector<const Corpus*> corpora;
  for (std::size_t k : sets) {
    labels.push_back(set_label(k));
    corpora.push_back(&test);
  }
  write_text_atomic(paths.root / "table1.csv", table.csv());
  write_text_atomic(paths.root / "table1.txt", table.text());
  write_text_atomic(paths.root / "table1_per_function.csv", per_function_csv(labels, corpora, reports, cfg.hash()));
  std::fputs(table.text().c_str(), stdout);
}

int cmd_generate(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Paths paths{cfg.output_dir};
  g_stage = "generate";
  log("simulating " + std::to_string(cfg.functions) + " source functions, " +
      std::to_string(cfg.run_plan.histories()) + " histories each");
  const Corpus corpus = build_corpus(cfg);
  write_dataset(corpus, paths.dataset());
  log("wrote " + paths.dataset().string());
  return kOk;
}

int cmd_split(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Paths paths{cfg.output_dir};
  g_stage = "split";
  const Corpus corpus = load_corpus(paths.dataset(), "generate");
  warn_hash("dataset", corpus.config_hash, cfg);
  const SplitCorpus split = split_corpus(cfg, corpus);
  write_dataset(split.train, paths.train());
  write_dataset(split.test, paths.test());
  log(std::to_string(split.train.size()) + " train / " + std::to_string(split.test.size()) + " test functions");
  return kOk;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Paths paths{cfg.output_dir};
  g_stage = "train";
  const Corpus train = load_corpus(paths.train(), "split");
  for (std::size_t k : selected_sets(cfg, o.set)) {
    g_stage = "train " + set_label(k);
    log("fraction " + std::to_string(cfg.subsets[k]) + ", " + std::to_string(cfg.deeponet_train.iterations) +
        " iterations");
    const auto t = train_on_subset(cfg, train, cfg.subsets[k]);
    save_model(paths, k, t, cfg.hash());
    log("final loss " + std::to_string(t.log.losses.empty() ? 0.0 : t.log.losses.back().second) + ", wrote " +
        paths.checkpoint(k).string());
  }
  return kOk;
}

int cmd_evaluate(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Paths paths{cfg.output_dir};
  g_stage = "evaluate";
  const Corpus test = load_corpus(paths.test(), "split");
  const auto sets = selected_sets(cfg, o.set);
  BenchmarkTable table;
  table.config_hash = cfg.hash();
  std::vector<std::vector<MetricsReport>> reports;
  for (std::size_t k : sets) {
    g_stage = "evaluate " + set_label(k);
    const DeepONetModel m = load_model(paths, k, cfg);
    reports.push_back(evaluate_corpus(m, test, cfg.threads));
    table.rows.push_back(summarize_row(set_label(k), cfg.subsets[k], reports.back()));
  }
  write_table1(paths, cfg, table, sets, reports, test);
  return kOk;
}

int cmd_table1(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Paths paths{cfg.output_dir};
  g_stage = "table1";
  SplitCorpus split;
  split.train = load_corpus(paths.train(), "split");
  split.test = load_corpus(paths.test(), "split");
  const Table1Result r = run_table1_experiment(cfg, split);
  for (std::size_t k = 0; k < r.models.size(); ++k) save_model(paths, k, r.models[k], cfg.hash());
  write_table1(paths, cfg, r.table, selected_sets(cfg, 0), r.per_function, split.test);
  return kOk;
}

int cmd_table2(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Paths paths{cfg.output_dir};
  g_stage = "table2";
  const Corpus test = load_corpus(paths.test(), "split");
  const DeepONetModel set1 = load_model(paths, 0, cfg);
  const Table2Result r = run_table2_experiment(cfg, set1, test);
  write_table2_outputs(r, paths.root);
  std::fputs(r.text().c_str(), stdout);
  return kOk;
}

int cmd_timing(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const Paths paths{cfg.output_dir};
  g_stage = "timing";
  const Corpus test = load_corpus(paths.test(), "split");
  const DeepONetModel set1 = load_model(paths, 0, cfg);
  const TimingReport r = run_timing_report(cfg, set1, test);
  write_text_atomic(paths.root / "timing.txt", r.text());
  std::fputs(r.text().c_str(), stdout);
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  std::optional<ExperimentConfig> cfg;
  if (!o.config.empty()) cfg = resolve_config(o);
  g_stage = "gradcheck";
  GradCheckOptions opt;
  if (cfg) opt.seed = cfg->seed;
  else if (o.seed) opt.seed = *o.seed;
  const std::size_t sensors = cfg ? cfg->sensors.count : 190;
  const GradCheckReport r = run_gradcheck(opt, sensors);
  char buf[256];
  std::snprintf(buf, sizeof buf, "probes %zu\nfailures %zu\nmax_rel_error %.3e\ntolerance %.1e\nresult %s\n",
                r.probes.size(), r.failures, r.max_rel_error, opt.tolerance, r.passed() ? "PASS" : "FAIL");
  std::string text = buf;
  for (const auto& p : r.probes)
    if (!(p.rel_error <= opt.tolerance)) {
      std::snprintf(buf, sizeof buf, "  %s tensor %zu index %zu analytic %.9g numeric %.9g rel %.3e\n",
                    p.target.c_str(), p.tensor, p.index, p.analytic, p.numeric, p.rel_error);
      text += buf;
    }
  if (cfg) write_text_atomic(fs::path(cfg->output_dir) / "gradcheck.txt", text);
  std::fputs(text.c_str(), stdout);
  return r.passed() ? kOk : kGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fluxop: Monte Carlo flux corpora and DeepONet surrogates"};
  app.require_subcommand(1);
  Options o;

  const auto add = [&](const char* name, const char* help, bool config_required = true) {
    CLI::App* sub = app.add_subcommand(name, help);
    auto* c = sub->add_option("-c,--config", o.config, "JSON experiment config");
    if (config_required) c->required();
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--out", o.out, "override the output directory (beats $" + std::string(kOutputDirEnv) + ")");
    return sub;
  };
  auto* generate = add("generate", "simulate the corpus and write dataset.bin");
  auto* split = add("split", "split dataset.bin into train.bin and test.bin and fit normalization");
  auto* train = add("train", "train DeepONets on the configured point subsets");
  auto* evaluate = add("evaluate", "score saved DeepONets on the test functions");
  auto* table1 = add("table1", "train and score one DeepONet per subset");
  auto* table2 = add("table2", "compare DeepONet, FCN and CNN on the best and worst test functions");
  auto* timing = add("timing", "time one simulation against one full-field prediction");
  auto* gradcheck = add("gradcheck", "finite-difference check of every model gradient", false);
  for (auto* sub : {train, evaluate})
    sub->add_option("--set", o.set, "1-based subset index; 0 means all")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(o);
    if (split->parsed()) return cmd_split(o);
    if (train->parsed()) return cmd_train(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (table1->parsed()) return cmd_table1(o);
    if (table2->parsed()) return cmd_table2(o);
    if (timing->parsed()) return cmd_timing(o);
    if (gradcheck->parsed()) return cmd_gradcheck(o);
    return kUsage;
  } catch (const ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return kConfig;
  } catch (const InputError& e) {
    log(std::string("missing input: ") + e.what());
    return kInput;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kRuntime;
  }
}
