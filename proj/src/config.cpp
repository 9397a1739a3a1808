#include "asars/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace asars {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::user_att: return "user_att";
    case Variant::user_cat: return "user_cat";
    case Variant::time_att: return "time_att";
    case Variant::time_cat: return "time_cat";
    case Variant::time_user: return "time_user";
  }
  return "baseline";
}

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "user_att") return Variant::user_att;
  if (s == "user_cat") return Variant::user_cat;
  if (s == "time_att") return Variant::time_att;
  if (s == "time_cat") return Variant::time_cat;
  if (s == "time_user") return Variant::time_user;
  throw ConfigError("unknown variant '" + s + "'");
}

std::string to_string(RnnCell c) { return c == RnnCell::gru ? "gru" : "lstm"; }

RnnCell cell_from_string(const std::string& s) {
  if (s == "gru") return RnnCell::gru;
  if (s == "lstm") return RnnCell::lstm;
  throw ConfigError("unknown rnn_cell '" + s + "'");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::bpr: return "bpr";
    case LossKind::top1: return "top1";
    case LossKind::hinge: return "hinge";
  }
  return "hinge";
}

LossKind loss_from_string(const std::string& s) {
  if (s == "bpr") return LossKind::bpr;
  if (s == "top1") return LossKind::top1;
  if (s == "hinge") return LossKind::hinge;
  throw ConfigError("unknown loss '" + s + "'");
}

std::string to_string(OptKind k) { return k == OptKind::adagrad ? "adagrad" : "adam"; }

OptKind opt_from_string(const std::string& s) {
  if (s == "adagrad") return OptKind::adagrad;
  if (s == "adam") return OptKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

void ModelConfig::resolve_biases() {
  auto def = [&](std::optional<bool>& flag, bool value) {
    if (!flag.has_value()) flag = value;
  };
  switch (variant) {
    case Variant::baseline:
      def(bias_mu, false); def(bias_user, false); def(bias_item, false);
      def(bias_item_time, false); def(bias_dev, false);
      break;
    case Variant::user_att:
    case Variant::user_cat:
      def(bias_mu, true); def(bias_user, true); def(bias_item, true);
      def(bias_item_time, false); def(bias_dev, false);
      break;
    case Variant::time_att:
    case Variant::time_cat:
      def(bias_mu, true); def(bias_user, false); def(bias_item, true);
      def(bias_item_time, true); def(bias_dev, false);
      break;
    case Variant::time_user:
      def(bias_mu, true); def(bias_user, true); def(bias_item, true);
      def(bias_item_time, true); def(bias_dev, true);
      break;
  }
}

void ModelConfig::validate() const {
  if (num_items < 1) throw ConfigError("model: num_items must be >= 1");
  if (item_dim < 1 || hidden_dim < 1) throw ConfigError("model: dims must be >= 1");
  if (dropout < 0 || dropout >= 1) throw ConfigError("model: dropout must be in [0,1)");
  if (max_session_len < 2) throw ConfigError("model: max_session_len must be >= 2");
  if (uses_time_embed() && (num_time_bins < 1 || time_dim < 1))
    throw ConfigError("model: time variants need num_time_bins >= 1 and time_dim >= 1");
  if (uses_user_embed() && (num_users < 1 || user_dim < 1))
    throw ConfigError("model: user variants need num_users >= 1 and user_dim >= 1");
  if (item_time_bias_on() && num_time_bins < 1)
    throw ConfigError("model: item-time bias needs num_time_bins >= 1");
  if ((user_bias_on() || dev_on()) && num_users < 1)
    throw ConfigError("model: user biases need num_users >= 1");
}

ModelConfig RunConfig::model_config(int num_items, int num_users, int num_time_bins) const {
  ModelConfig m;
  m.variant = variant_from_string(variant);
  m.num_items = num_items;
  m.num_users = num_users;
  m.num_time_bins = num_time_bins;
  m.item_dim = item_embed_dim;
  m.time_dim = time_embed_dim;
  m.user_dim = user_embed_dim;
  m.hidden_dim = hidden_dim;
  m.dropout = dropout;
  m.cell = cell_from_string(rnn_cell);
  m.max_session_len = max_session_len;
  m.dev_beta = dev_beta;
  auto tri = [](int v) -> std::optional<bool> {
    if (v < 0) return std::nullopt;
    return v != 0;
  };
  m.bias_mu = tri(bias_mu);
  m.bias_user = tri(bias_user);
  m.bias_item = tri(bias_item);
  m.bias_item_time = tri(bias_item_time);
  m.bias_dev = tri(bias_dev);
  m.bit_full_table = bit_full_table;
  m.attention_bypass = attention_bypass;
  m.attention_zero_fill = attention_zero_fill;
  m.resolve_biases();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.loss = loss_from_string(loss);
  t.optimizer = opt_from_string(optimizer);
  t.learning_rate = learning_rate;
  t.batch_size = batch_size;
  t.epochs_max = epochs_max;
  t.early_stop_patience = early_stop_patience;
  t.k_neg = k_neg;
  t.seed = seed;
  if (batch_mode == "session_parallel") t.batch_mode = BatchMode::session_parallel;
  else if (batch_mode == "user_parallel") t.batch_mode = BatchMode::user_parallel;
  else throw ConfigError("unknown batch_mode '" + batch_mode + "'");
  t.val_fraction = val_fraction;
  t.exclude_user_history = exclude_user_history;
  t.literal_loss_forms = literal_loss_forms;
  t.shuffle_sessions = shuffle_sessions;
  return t;
}

FilterThresholds RunConfig::filter_thresholds() const {
  return FilterThresholds{min_item_events, min_session_len, min_user_sessions};
}

namespace {

// One row per key keeps parsing, serialization, overrides and grid expansion
// in lockstep.
struct KeyBinding {
  const char* key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T, typename F>
json to_json_value(const T& v, F) {
  return json(v);
}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> b = [] {
    std::vector<KeyBinding> v;
    auto add = [&](const char* key, auto member) {
      v.push_back(KeyBinding{
          key,
          [member](const RunConfig& c) { return json(c.*member); },
          [member, key](RunConfig& c, const json& j) {
            using T = std::decay_t<decltype(c.*member)>;
            try {
              c.*member = j.get<T>();
            } catch (const json::exception&) {
              throw ConfigError(std::string("config key '") + key + "': bad value " + j.dump());
            }
          }});
    };
    add("gap_seconds", &RunConfig::gap_seconds);
    add("min_item_events", &RunConfig::min_item_events);
    add("min_session_len", &RunConfig::min_session_len);
    add("min_user_sessions", &RunConfig::min_user_sessions);
    add("test_fraction", &RunConfig::test_fraction);
    add("boundary_ts", &RunConfig::boundary_ts);
    add("max_bins", &RunConfig::max_bins);
    add("dwell_cap_percentile", &RunConfig::dwell_cap_percentile);
    add("variant", &RunConfig::variant);
    add("item_embed_dim", &RunConfig::item_embed_dim);
    add("time_embed_dim", &RunConfig::time_embed_dim);
    add("user_embed_dim", &RunConfig::user_embed_dim);
    add("hidden_dim", &RunConfig::hidden_dim);
    add("dropout", &RunConfig::dropout);
    add("rnn_cell", &RunConfig::rnn_cell);
    add("max_session_len", &RunConfig::max_session_len);
    add("dev_beta", &RunConfig::dev_beta);
    add("bias_mu", &RunConfig::bias_mu);
    add("bias_user", &RunConfig::bias_user);
    add("bias_item", &RunConfig::bias_item);
    add("bias_item_time", &RunConfig::bias_item_time);
    add("bias_dev", &RunConfig::bias_dev);
    add("bit_full_table", &RunConfig::bit_full_table);
    add("attention_bypass", &RunConfig::attention_bypass);
    add("attention_zero_fill", &RunConfig::attention_zero_fill);
    add("loss", &RunConfig::loss);
    add("optimizer", &RunConfig::optimizer);
    add("learning_rate", &RunConfig::learning_rate);
    add("batch_size", &RunConfig::batch_size);
    add("epochs_max", &RunConfig::epochs_max);
    add("early_stop_patience", &RunConfig::early_stop_patience);
    add("k_neg", &RunConfig::k_neg);
    add("seed", &RunConfig::seed);
    add("batch_mode", &RunConfig::batch_mode);
    add("val_fraction", &RunConfig::val_fraction);
    add("exclude_user_history", &RunConfig::exclude_user_history);
    add("literal_loss_forms", &RunConfig::literal_loss_forms);
    add("shuffle_sessions", &RunConfig::shuffle_sessions);
    add("eval_ks", &RunConfig::eval_ks);
    return v;
  }();
  return b;
}

const KeyBinding& binding_for(const std::string& key) {
  for (const auto& b : bindings())
    if (key == b.key) return b;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::string RunConfig::to_json() const {
  json out = json::object();
  for (const auto& b : bindings()) out[b.key] = b.get(*this);
  return out.dump(2);
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  RunConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it)
    binding_for(it.key()).set(cfg, it.value());
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const KeyBinding& b = binding_for(key);
  // flag values arrive as raw text; interpret via JSON with a string fallback
  json j;
  try {
    j = json::parse(value);
  } catch (const json::exception&) {
    j = json(value);
  }
  if (j.is_string() || j.is_boolean() || j.is_number() || j.is_array()) {
    try {
      b.set(cfg, j);
      return;
    } catch (const ConfigError&) {
      if (!j.is_string()) b.set(cfg, json(value));  // rethrows with context
      else throw;
    }
  } else {
    throw ConfigError("override '" + key + "': unsupported value " + value);
  }
}

std::vector<RunConfig> grid_points(const RunConfig& base, const std::string& grid_json) {
  json j;
  try {
    j = json::parse(grid_json);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || j.empty())
    throw ConfigError("grid: expected a non-empty object of key -> value list");

  std::vector<std::pair<const KeyBinding*, std::vector<json>>> axes;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array() || it.value().empty())
      throw ConfigError("grid key '" + it.key() + "': expected a non-empty array");
    axes.push_back({&binding_for(it.key()),
                    std::vector<json>(it.value().begin(), it.value().end())});
  }
  std::vector<RunConfig> out{base};
  for (const auto& [bind, values] : axes) {
    std::vector<RunConfig> next;
    for (const RunConfig& cfg : out)
      for (const json& v : values) {
        RunConfig c = cfg;
        bind->set(c, v);
        next.push_back(std::move(c));
      }
    out = std::move(next);
  }
  return out;
}

}  // namespace asars
