#pragma once

#include <functional>
#include <string>

#include "asars/config.hpp"
#include "asars/io.hpp"
#include "asars/synth.hpp"
#include "asars/training.hpp"

namespace asars {

// events -> sessionize -> support filters -> time split -> binning
inline Corpus preprocess_events(const std::vector<Event>& events, const RunConfig& cfg) {
  auto raw = sessionize(events, cfg.gap_seconds);
  Corpus filtered = filter_support(raw, cfg.filter_thresholds());
  int64_t boundary = cfg.boundary_ts >= 0
                         ? cfg.boundary_ts
                         : boundary_for_fraction(filtered, cfg.test_fraction);
  SplitOptions split_opt;
  split_opt.dwell_cap_percentile = cfg.dwell_cap_percentile;
  split_opt.max_bins = cfg.max_bins;
  return split_train_test(filtered, boundary, split_opt);
}

template <typename S = float>
struct TrainOutcome {
  Model<S> model;
  FitResult fit;
};

template <typename S = float>
TrainOutcome<S> run_train(const Corpus& corpus, const RunConfig& cfg,
                          const FitHooks& hooks = {}) {
  ModelConfig mc =
      cfg.model_config(corpus.num_items, corpus.num_users,
                       std::max(1, corpus.binning.num_bins));
  Model<S> model = make_model<S>(mc, cfg.seed);
  attach_user_stats(model, corpus);
  FitResult result = fit(model, corpus, cfg.train_config(), hooks);
  return {std::move(model), std::move(result)};
}

template <typename S = float>
MetricsReport run_evaluate(Model<S>& model, const Corpus& corpus, const RunConfig& cfg) {
  MetricsReport rep = evaluate(model, corpus, cfg.eval_ks, cfg.batch_size);
  rep.seed = cfg.seed;
  rep.config_hash = cfg.hash();
  return rep;
}

struct GridOutcome {
  std::vector<std::pair<RunConfig, FitResult>> runs;
  size_t best_index = 0;  // highest validation MRR@20
};

template <typename S = float>
GridOutcome run_grid(const Corpus& corpus, const std::vector<RunConfig>& points,
                     const std::string& best_ckpt_path = {},
                     const std::function<void(size_t, const EpochStats&)>& on_epoch = {}) {
  if (points.empty()) throw ConfigError("grid: no points to run");
  GridOutcome out;
  double best = -1;
  for (size_t i = 0; i < points.size(); ++i) {
    FitHooks hooks;
    if (on_epoch)
      hooks.on_epoch = [&, i](const EpochStats& st) { on_epoch(i, st); };
    TrainOutcome<S> run = run_train<S>(corpus, points[i], hooks);
    if (run.fit.best_val_mrr20 > best) {
      best = run.fit.best_val_mrr20;
      out.best_index = i;
      if (!best_ckpt_path.empty()) save_checkpoint(best_ckpt_path, run.model);
    }
    out.runs.push_back({points[i], std::move(run.fit)});
  }
  return out;
}

}  // namespace asars
