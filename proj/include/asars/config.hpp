#pragma once

#include <string>
#include <vector>

#include "asars/model.hpp"
#include "asars/training.hpp"

namespace asars {

// Flat-key run configuration covering preprocessing, model, training and
// evaluation. Defaults are the shipped MovieLens profile (batch 64, max
// length 200, item/time/user dims 64/16/32, hidden 100, lr 0.2, dropout 0.5,
// hinge + Adagrad). Unknown keys are rejected.
struct RunConfig {
  // dataprep
  int64_t gap_seconds = 3600;
  int min_item_events = 10;
  int min_session_len = 2;
  int min_user_sessions = 10;
  double test_fraction = 0.1;
  int64_t boundary_ts = -1;  // < 0: derive from test_fraction
  int max_bins = 512;
  double dwell_cap_percentile = 99.5;

  // model
  std::string variant = "time_user";
  int item_embed_dim = 64;
  int time_embed_dim = 16;
  int user_embed_dim = 32;
  int hidden_dim = 100;
  double dropout = 0.5;
  std::string rnn_cell = "gru";
  int max_session_len = 200;
  double dev_beta = 0.4;
  int bias_mu = -1;  // -1: per-variant default, else 0/1
  int bias_user = -1;
  int bias_item = -1;
  int bias_item_time = -1;
  int bias_dev = -1;
  bool bit_full_table = false;
  bool attention_bypass = false;
  bool attention_zero_fill = false;

  // training
  std::string loss = "hinge";
  std::string optimizer = "adagrad";
  double learning_rate = 0.2;
  int batch_size = 64;
  int epochs_max = 20;
  int early_stop_patience = 10;
  int k_neg = 50;
  uint64_t seed = 1;
  std::string batch_mode = "session_parallel";
  double val_fraction = 0.1;
  bool exclude_user_history = true;
  bool literal_loss_forms = false;
  bool shuffle_sessions = false;

  // eval
  std::vector<int> eval_ks = {10, 20, 30, 40};

  ModelConfig model_config(int num_items, int num_users, int num_time_bins) const;
  TrainConfig train_config() const;
  FilterThresholds filter_thresholds() const;

  std::string to_json() const;          // canonical key order
  uint64_t hash() const { return fnv1a64(to_json()); }
};

// Parses a JSON object of flat keys; unknown keys raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Applies "key=value" overrides (CLI flags win over the config file).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Expands {"key": [v1, v2, ...], ...} into the cartesian product of configs.
std::vector<RunConfig> grid_points(const RunConfig& base, const std::string& grid_json);

}  // namespace asars
