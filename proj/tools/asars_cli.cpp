#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "asars/pipeline.hpp"

namespace {

using namespace asars;

int verbosity() {
  const char* env = std::getenv("ASARS_LOG");
  if (!env) return 1;
  std::string v = env;
  if (v == "quiet" || v == "0") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (verbosity() >= 1) std::cerr << msg << "\n";
}

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
}

std::vector<int> parse_ks(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    ks.push_back(std::stoi(tok));
  }
  if (ks.empty()) throw ConfigError("--ks: expected a comma-separated list like 10,20");
  return ks;
}

int cmd_preprocess(const std::string& input, const std::string& format,
                   const std::string& config_path, const std::vector<std::string>& sets,
                   const std::string& output, const std::string& summary_path) {
  RunConfig cfg = resolve_config(config_path, sets);
  std::vector<Event> events =
      format == "ml1m" ? load_movielens_dat(input) : load_event_csv(input);
  info("loaded " + std::to_string(events.size()) + " events from " + input);
  Corpus corpus = preprocess_events(events, cfg);
  write_corpus(output, corpus);
  std::string summary = corpus_summary_json(corpus, cfg.filter_thresholds());
  if (!summary_path.empty()) write_text(summary_path, summary);
  std::cout << summary << "\n";
  return 0;
}

int cmd_synth(const std::string& profile, uint64_t seed, const std::string& output,
              int events, int items, int users, int clusters) {
  SynthOptions opt;
  opt.profile = synth_profile_from_string(profile);
  opt.seed = seed;
  opt.num_events = events;
  opt.num_items = items;
  opt.num_users = users;
  opt.num_clusters = clusters;
  auto data = synth_events(opt);
  write_event_csv(output, data);
  info("wrote " + std::to_string(data.size()) + " events to " + output);
  return 0;
}

int cmd_train(const std::string& corpus_path, const std::string& config_path,
              const std::vector<std::string>& sets, const std::string& out_path,
              const std::string& log_path) {
  RunConfig cfg = resolve_config(config_path, sets);
  Corpus corpus = read_corpus(corpus_path);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write '" + log_path + "'");
  }
  FitHooks hooks;
  hooks.on_epoch = [&](const EpochStats& st) {
    if (log.is_open()) log << epoch_log_line(st) << "\n" << std::flush;
    info("epoch " + std::to_string(st.epoch) + ": train_loss=" +
         std::to_string(st.train_loss) + " val_loss=" + std::to_string(st.val_loss) +
         " val_mrr20=" + std::to_string(st.val_mrr20));
  };
  auto outcome = run_train<float>(corpus, cfg, hooks);
  save_checkpoint(out_path, outcome.model);
  info("best epoch " + std::to_string(outcome.fit.best_epoch) + ", checkpoint " + out_path);
  return 0;
}

int cmd_evaluate(const std::string& corpus_path, const std::string& ckpt_path,
                 const std::string& ks_text, const std::string& report_path,
                 const std::string& csv_path, const std::string& dataset,
                 const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg = resolve_config(config_path, sets);
  if (!ks_text.empty()) cfg.eval_ks = parse_ks(ks_text);
  Corpus corpus = read_corpus(corpus_path);
  Model<float> model = load_checkpoint<float>(ckpt_path);
  MetricsReport rep = run_evaluate(model, corpus, cfg);
  rep.dataset = dataset.empty() ? corpus_path : dataset;
  rep.checkpoint_hash = file_hash(ckpt_path);
  std::string json_text = report_to_json(rep);
  if (!report_path.empty()) write_text(report_path, json_text);
  if (!csv_path.empty()) write_text(csv_path, report_to_csv(rep));
  std::cout << json_text << "\n";
  return 0;
}

int cmd_grid(const std::string& corpus_path, const std::string& config_path,
             const std::vector<std::string>& sets, const std::string& grid_path,
             const std::string& out_path, const std::string& log_path) {
  RunConfig base = resolve_config(config_path, sets);
  std::ifstream gf(grid_path);
  if (!gf) throw IoError("cannot open grid '" + grid_path + "'");
  std::stringstream ss;
  ss << gf.rdbuf();
  auto points = grid_points(base, ss.str());
  info("grid: " + std::to_string(points.size()) + " points");

  Corpus corpus = read_corpus(corpus_path);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write '" + log_path + "'");
  }
  auto outcome = run_grid<float>(corpus, points, out_path,
                                 [&](size_t point, const EpochStats& st) {
                                   if (log.is_open())
                                     log << "{\"grid_point\":" << point
                                         << ",\"stats\":" << epoch_log_line(st) << "}\n";
                                 });
  const auto& best_cfg = outcome.runs[outcome.best_index].first;
  const auto& best_fit = outcome.runs[outcome.best_index].second;
  std::cout << "{\"best_point\":" << outcome.best_index
            << ",\"best_val_mrr20\":" << best_fit.best_val_mrr20
            << ",\"config_hash\":" << best_cfg.hash() << "}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ASARS: session-aware sequential recommendation engine"};
  app.require_subcommand(1);

  std::string input, output, config_path, summary_path, format = "csv";
  std::string corpus_path, ckpt_path, ks_text, report_path, csv_path, dataset;
  std::string grid_path, log_path, profile = "markov";
  std::vector<std::string> sets;
  uint64_t seed = 7;
  int events = 100000, items = 1000, users = 200, clusters = 25;

  auto* pre = app.add_subcommand("preprocess", "Build a corpus file from an event log");
  pre->add_option("--input", input, "event CSV (user_id,item_id,timestamp[,session_id])")
      ->required();
  pre->add_option("--format", format, "csv | ml1m (MovieLens ratings.dat)");
  pre->add_option("--config", config_path, "run config JSON");
  pre->add_option("--set", sets, "override config keys, key=value");
  pre->add_option("--output", output, "corpus file to write")->required();
  pre->add_option("--summary", summary_path, "summary JSON to write");

  auto* syn = app.add_subcommand("synth", "Generate a synthetic event log");
  syn->add_option("--profile", profile, "markov | dwell-signal");
  syn->add_option("--seed", seed, "generator seed");
  syn->add_option("--output", output, "event CSV to write")->required();
  syn->add_option("--events", events, "number of events");
  syn->add_option("--items", items, "vocabulary size");
  syn->add_option("--users", users, "number of users");
  syn->add_option("--clusters", clusters, "number of item clusters");

  auto* tr = app.add_subcommand("train", "Train a model on a corpus");
  tr->add_option("--corpus", corpus_path, "corpus file")->required();
  tr->add_option("--config", config_path, "run config JSON");
  tr->add_option("--set", sets, "override config keys, key=value");
  tr->add_option("--out", output, "checkpoint to write")->required();
  tr->add_option("--log", log_path, "JSON-lines training log");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  ev->add_option("--corpus", corpus_path, "corpus file")->required();
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--ks", ks_text, "cutoffs, e.g. 10,20,30,40");
  ev->add_option("--report", report_path, "report JSON to write");
  ev->add_option("--csv", csv_path, "report CSV to write");
  ev->add_option("--dataset", dataset, "dataset label for the report");
  ev->add_option("--config", config_path, "run config JSON");
  ev->add_option("--set", sets, "override config keys, key=value");

  auto* gr = app.add_subcommand("grid", "Grid-search training configurations");
  gr->add_option("--corpus", corpus_path, "corpus file")->required();
  gr->add_option("--config", config_path, "base run config JSON");
  gr->add_option("--set", sets, "override config keys, key=value");
  gr->add_option("--grid", grid_path, "grid JSON: {key: [values...]}")->required();
  gr->add_option("--out", output, "best checkpoint to write");
  gr->add_option("--log", log_path, "JSON-lines grid log");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed())
      return cmd_preprocess(input, format, config_path, sets, output, summary_path);
    if (syn->parsed())
      return cmd_synth(profile, seed, output, events, items, users, clusters);
    if (tr->parsed())
      return cmd_train(corpus_path, config_path, sets, output, log_path);
    if (ev->parsed())
      return cmd_evaluate(corpus_path, ckpt_path, ks_text, report_path, csv_path,
                          dataset, config_path, sets);
    if (gr->parsed())
      return cmd_grid(corpus_path, config_path, sets, grid_path, output, log_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
