#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "asars/io.hpp"

namespace asars {

using nlohmann::json;

namespace {

constexpr char kCorpusMagic[] = "ASARS-CORPUS-1";
constexpr char kCkptMagic[] = "ASARS-CKPT-1";

// Explicit little-endian encoding; the formats are defined byte-for-byte.
class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, size_t n) { buf_.append(p, n); }

  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string buf, std::string what) : buf_(std::move(buf)), what_(std::move(what)) {}

  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint32_t u32() {
    const char* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const char* p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    const char* p = take(n);
    return std::string(p, n);
  }
  void expect_magic(const char* magic) {
    size_t n = std::strlen(magic);
    const char* p = take(n);
    if (std::memcmp(p, magic, n) != 0)
      throw IoError(what_ + ": bad magic (expected " + magic + "); incompatible or corrupt file");
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  const char* take(size_t n) {
    if (pos_ + n > buf_.size()) throw IoError(what_ + ": truncated file");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string buf_;
  std::string what_;
  size_t pos_ = 0;
};

void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_corpus(const std::string& path, const Corpus& corpus) {
  Writer w;
  w.raw(kCorpusMagic, std::strlen(kCorpusMagic));
  w.u32(1);  // version
  w.u32(static_cast<uint32_t>(corpus.num_items));
  w.u32(static_cast<uint32_t>(corpus.num_users));
  w.f64(corpus.binning.bin_width);
  w.u32(static_cast<uint32_t>(corpus.binning.num_bins));
  w.f64(corpus.binning.dwell_cap);
  w.u8(corpus.binning.from_train_only ? 1 : 0);
  for (const auto& name : corpus.item_names) w.str(name);
  for (const auto& name : corpus.user_names) w.str(name);
  for (int64_t p : corpus.popularity) w.u64(static_cast<uint64_t>(p));
  for (const auto& hist : corpus.user_history) {
    w.u32(static_cast<uint32_t>(hist.size()));
    for (int item : hist) w.u32(static_cast<uint32_t>(item));
  }
  w.u64(corpus.sessions.size());
  for (const auto& s : corpus.sessions) {
    w.u32(static_cast<uint32_t>(s.user));
    w.u8(s.is_test ? 1 : 0);
    w.u32(static_cast<uint32_t>(s.items.size()));
    for (int it : s.items) w.u32(static_cast<uint32_t>(it));
    for (int64_t t : s.ts) w.i64(t);
  }
  write_file(path, w.buffer());
}

Corpus read_corpus(const std::string& path) {
  Reader r(read_file(path), "corpus '" + path + "'");
  r.expect_magic(kCorpusMagic);
  uint32_t version = r.u32();
  if (version != 1)
    throw IoError("corpus '" + path + "': unsupported version " + std::to_string(version));
  Corpus c;
  c.num_items = static_cast<int>(r.u32());
  c.num_users = static_cast<int>(r.u32());
  c.binning.bin_width = r.f64();
  c.binning.num_bins = static_cast<int>(r.u32());
  c.binning.dwell_cap = r.f64();
  c.binning.from_train_only = r.u8() != 0;
  for (int i = 0; i < c.num_items; ++i) {
    c.item_names.push_back(r.str());
    c.item_ids[c.item_names.back()] = i;
  }
  for (int u = 0; u < c.num_users; ++u) {
    c.user_names.push_back(r.str());
    c.user_ids[c.user_names.back()] = u;
  }
  c.popularity.resize(static_cast<size_t>(c.num_items));
  for (auto& p : c.popularity) p = static_cast<int64_t>(r.u64());
  c.user_history.resize(static_cast<size_t>(c.num_users));
  for (auto& hist : c.user_history) {
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) hist.insert(static_cast<int>(r.u32()));
  }
  uint64_t n_sessions = r.u64();
  const bool has_bins = c.binning.bin_width > 0 && c.binning.num_bins >= 1;
  for (uint64_t i = 0; i < n_sessions; ++i) {
    Session s;
    s.user = static_cast<int>(r.u32());
    s.is_test = r.u8() != 0;
    uint32_t n = r.u32();
    s.items.reserve(n);
    for (uint32_t k = 0; k < n; ++k) s.items.push_back(static_cast<int>(r.u32()));
    s.ts.reserve(n);
    for (uint32_t k = 0; k < n; ++k) s.ts.push_back(r.i64());
    s.start_ts = s.ts.empty() ? 0 : s.ts.front();
    s.end_ts = s.ts.empty() ? 0 : s.ts.back();
    // dwell and bins are pure functions of timestamps and the stored binning
    for (size_t k = 0; k + 1 < s.ts.size(); ++k) {
      double d = std::max<double>(1.0, static_cast<double>(s.ts[k + 1] - s.ts[k]));
      s.dwell.push_back(d);
      if (has_bins) s.time_bins.push_back(c.binning.bin_of(d));
    }
    c.sessions.push_back(std::move(s));
  }
  if (!r.at_end()) throw IoError("corpus '" + path + "': trailing bytes");
  c.rebuild_user_index();
  return c;
}

std::string corpus_summary_json(const Corpus& corpus, const FilterThresholds& t) {
  size_t events = 0, train_sessions = 0, test_sessions = 0;
  for (const auto& s : corpus.sessions) {
    events += s.items.size();
    (s.is_test ? test_sessions : train_sessions) += 1;
  }
  json j;
  j["events"] = events;
  j["users"] = corpus.num_users;
  j["items"] = corpus.num_items;
  j["sessions"] = corpus.sessions.size();
  j["train_sessions"] = train_sessions;
  j["test_sessions"] = test_sessions;
  j["item_support"] = t.min_item_events;
  j["session_support"] = t.min_session_len;
  j["user_support"] = t.min_user_sessions;
  j["num_time_bins"] = corpus.binning.num_bins;
  j["bin_width_seconds"] = corpus.binning.bin_width;
  j["dwell_cap_seconds"] = corpus.binning.dwell_cap;
  return j.dump(2);
}

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
  Writer w;
  w.raw(kCkptMagic, std::strlen(kCkptMagic));
  w.u32(1);  // version
  w.str(data.config_json);
  w.u32(static_cast<uint32_t>(data.arrays.size()));
  for (const auto& [name, value] : data.arrays) {
    w.str(name);
    w.u32(static_cast<uint32_t>(value.rows()));
    w.u32(static_cast<uint32_t>(value.cols()));
    for (Eigen::Index i = 0; i < value.rows(); ++i)
      for (Eigen::Index j = 0; j < value.cols(); ++j) w.f32(value(i, j));
  }
  write_file(path, w.buffer());
}

CheckpointData read_checkpoint_file(const std::string& path) {
  Reader r(read_file(path), "checkpoint '" + path + "'");
  r.expect_magic(kCkptMagic);
  uint32_t version = r.u32();
  if (version != 1)
    throw IoError("checkpoint '" + path + "': unsupported version " +
                  std::to_string(version));
  CheckpointData data;
  data.config_json = r.str();
  uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    uint32_t rows = r.u32(), cols = r.u32();
    Mat<float> m(rows, cols);
    for (uint32_t a = 0; a < rows; ++a)
      for (uint32_t b = 0; b < cols; ++b) m(a, b) = r.f32();
    data.arrays.push_back({std::move(name), std::move(m)});
  }
  if (!r.at_end()) throw IoError("checkpoint '" + path + "': trailing bytes");
  return data;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["variant"] = to_string(cfg.variant);
  j["num_items"] = cfg.num_items;
  j["num_users"] = cfg.num_users;
  j["num_time_bins"] = cfg.num_time_bins;
  j["item_dim"] = cfg.item_dim;
  j["time_dim"] = cfg.time_dim;
  j["user_dim"] = cfg.user_dim;
  j["hidden_dim"] = cfg.hidden_dim;
  j["dropout"] = cfg.dropout;
  j["cell"] = to_string(cfg.cell);
  j["max_session_len"] = cfg.max_session_len;
  j["bias_mu"] = cfg.mu_on();
  j["bias_user"] = cfg.user_bias_on();
  j["bias_item"] = cfg.item_bias_on();
  j["bias_item_time"] = cfg.item_time_bias_on();
  j["bias_dev"] = cfg.dev_on();
  j["bit_full_table"] = cfg.bit_full_table;
  j["dev_beta"] = cfg.dev_beta;
  j["attention_bypass"] = cfg.attention_bypass;
  j["attention_zero_fill"] = cfg.attention_zero_fill;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint config: invalid JSON: ") + e.what());
  }
  ModelConfig cfg;
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.num_items = j.at("num_items").get<int>();
  cfg.num_users = j.at("num_users").get<int>();
  cfg.num_time_bins = j.at("num_time_bins").get<int>();
  cfg.item_dim = j.at("item_dim").get<int>();
  cfg.time_dim = j.at("time_dim").get<int>();
  cfg.user_dim = j.at("user_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.cell = cell_from_string(j.at("cell").get<std::string>());
  cfg.max_session_len = j.at("max_session_len").get<int>();
  cfg.bias_mu = j.at("bias_mu").get<bool>();
  cfg.bias_user = j.at("bias_user").get<bool>();
  cfg.bias_item = j.at("bias_item").get<bool>();
  cfg.bias_item_time = j.at("bias_item_time").get<bool>();
  cfg.bias_dev = j.at("bias_dev").get<bool>();
  cfg.bit_full_table = j.at("bit_full_table").get<bool>();
  cfg.dev_beta = j.at("dev_beta").get<double>();
  cfg.attention_bypass = j.at("attention_bypass").get<bool>();
  cfg.attention_zero_fill = j.at("attention_zero_fill").get<bool>();
  return cfg;
}

uint64_t file_hash(const std::string& path) {
  std::string buf = read_file(path);
  return fnv1a64(buf.data(), buf.size());
}

std::string report_to_json(const MetricsReport& rep) {
  json j;
  j["dataset"] = rep.dataset;
  j["variant"] = rep.variant;
  j["ks"] = rep.ks;
  json mrr = json::object(), recall = json::object();
  for (const auto& [k, v] : rep.mrr) mrr[std::to_string(k)] = v;
  for (const auto& [k, v] : rep.recall) recall[std::to_string(k)] = v;
  j["mrr"] = mrr;
  j["recall"] = recall;
  j["n_predictions"] = rep.n_predictions;
  j["seed"] = rep.seed;
  j["config_hash"] = rep.config_hash;
  j["checkpoint_hash"] = rep.checkpoint_hash;
  return j.dump(2);
}

std::string report_to_csv(const MetricsReport& rep) {
  std::ostringstream head, row;
  head << "dataset,model";
  row << rep.dataset << ',' << rep.variant;
  for (int k : rep.ks) {
    head << ",MRR@" << k << ",RECALL@" << k;
    row << ',' << rep.mrr.at(k) << ',' << rep.recall.at(k);
  }
  return head.str() + "\n" + row.str() + "\n";
}

std::string epoch_log_line(const EpochStats& stats) {
  json j;
  j["epoch"] = stats.epoch;
  j["train_loss"] = stats.train_loss;
  j["val_loss"] = stats.val_loss;
  j["val_mrr20"] = stats.val_mrr20;
  j["seconds"] = stats.seconds;
  return j.dump();
}

}  // namespace asars
