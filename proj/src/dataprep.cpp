#include "asars/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace asars {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

int64_t parse_ts(const std::string& s, size_t line_no) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    if (v < 0) throw DataError("line " + std::to_string(line_no) +
                               ": negative timestamp " + s);
    return v;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) +
                    ": bad timestamp '" + s + "'");
  }
}

// Derives positive dwell values from per-event timestamps within a session.
// Duplicate timestamps would yield zero gaps, which the downstream gamma and
// Scott machinery cannot take; they are clamped to one second.
std::vector<double> dwells_from_ts(const std::vector<int64_t>& ts) {
  std::vector<double> out;
  if (ts.size() < 2) return out;
  out.reserve(ts.size() - 1);
  for (size_t i = 0; i + 1 < ts.size(); ++i)
    out.push_back(std::max<double>(1.0, static_cast<double>(ts[i + 1] - ts[i])));
  return out;
}

}  // namespace

std::vector<Event> parse_event_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: missing CSV header");
  auto header = split(strip_cr(line), ',');
  bool has_session = false;
  if (header.size() == 4 && header[3] == "session_id") {
    has_session = true;
  } else if (header.size() != 3) {
    throw DataError("line 1: expected header user_id,item_id,timestamp[,session_id]");
  }
  if (header[0] != "user_id" || header[1] != "item_id" || header[2] != "timestamp")
    throw DataError("line 1: expected header user_id,item_id,timestamp[,session_id]");

  std::vector<Event> events;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string stripped = strip_cr(line);
    if (stripped.empty()) continue;
    auto fields = split(stripped, ',');
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty())
      throw DataError("line " + std::to_string(line_no) + ": empty user or item id");
    Event e;
    e.user_raw = fields[0];
    e.item_raw = fields[1];
    e.timestamp = parse_ts(fields[2], line_no);
    if (has_session && !fields[3].empty()) e.session_raw = fields[3];
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<Event> load_event_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_event_csv(in);
}

std::vector<Event> load_movielens_dat(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<Event> events;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string stripped = strip_cr(line);
    if (stripped.empty()) continue;
    // UserID::MovieID::Rating::Timestamp
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t pos = stripped.find("::", start);
      if (pos == std::string::npos) {
        fields.push_back(stripped.substr(start));
        break;
      }
      fields.push_back(stripped.substr(start, pos - start));
      start = pos + 2;
    }
    if (fields.size() != 4)
      throw DataError("line " + std::to_string(line_no) +
                      ": expected user::movie::rating::timestamp");
    Event e;
    e.user_raw = fields[0];
    e.item_raw = fields[1];
    e.timestamp = parse_ts(fields[3], line_no);
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<RawSession> sessionize(std::vector<Event> events, int64_t gap_seconds) {
  if (gap_seconds <= 0) throw ConfigError("sessionize: gap_seconds must be positive");
  if (events.empty()) return {};

  bool all_have_session = std::all_of(events.begin(), events.end(),
                                      [](const Event& e) { return e.session_raw.has_value(); });

  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.user_raw != b.user_raw) return a.user_raw < b.user_raw;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.item_raw < b.item_raw;  // tie order: raw item id ascending
  });

  std::vector<RawSession> out;
  auto flush = [&](RawSession& s) {
    if (s.items_raw.empty()) return;
    s.start_ts = s.ts.front();
    s.end_ts = s.ts.back();
    out.push_back(std::move(s));
    s = RawSession{};
  };

  RawSession cur;
  std::string cur_session_key;
  for (const Event& e : events) {
    bool boundary = false;
    if (cur.items_raw.empty()) {
      boundary = false;
    } else if (e.user_raw != cur.user_raw) {
      boundary = true;
    } else if (all_have_session) {
      boundary = *e.session_raw != cur_session_key;
    } else {
      boundary = (e.timestamp - cur.ts.back()) >= gap_seconds;
    }
    if (boundary) flush(cur);
    if (cur.items_raw.empty()) {
      cur.user_raw = e.user_raw;
      if (all_have_session) cur_session_key = *e.session_raw;
    }
    cur.items_raw.push_back(e.item_raw);
    cur.ts.push_back(e.timestamp);
  }
  flush(cur);
  return out;
}

Corpus filter_support(const std::vector<RawSession>& sessions, const FilterThresholds& t) {
  if (t.min_item_events < 1 || t.min_session_len < 1 || t.min_user_sessions < 1)
    throw ConfigError("filter_support: thresholds must be >= 1");

  std::vector<RawSession> work = sessions;

  // Each filter can re-trigger the others, so iterate to a fixed point.
  bool changed = true;
  while (changed) {
    changed = false;

    std::unordered_map<std::string, int64_t> item_events;
    for (const auto& s : work)
      for (const auto& it : s.items_raw) ++item_events[it];

    for (auto& s : work) {
      size_t w = 0;
      for (size_t i = 0; i < s.items_raw.size(); ++i) {
        if (item_events[s.items_raw[i]] >= t.min_item_events) {
          s.items_raw[w] = s.items_raw[i];
          s.ts[w] = s.ts[i];
          ++w;
        } else {
          changed = true;
        }
      }
      s.items_raw.resize(w);
      s.ts.resize(w);
    }

    size_t before = work.size();
    work.erase(std::remove_if(work.begin(), work.end(),
                              [&](const RawSession& s) {
                                return s.items_raw.size() <
                                       static_cast<size_t>(t.min_session_len);
                              }),
               work.end());
    if (work.size() != before) changed = true;

    std::unordered_map<std::string, int> user_sessions;
    for (const auto& s : work) ++user_sessions[s.user_raw];
    before = work.size();
    work.erase(std::remove_if(work.begin(), work.end(),
                              [&](const RawSession& s) {
                                return user_sessions[s.user_raw] < t.min_user_sessions;
                              }),
               work.end());
    if (work.size() != before) changed = true;
  }

  if (work.empty())
    throw DataError("filter_support: all data filtered out (thresholds too strict)");

  Corpus corpus;
  for (auto& s : work) {
    s.start_ts = s.ts.front();
    s.end_ts = s.ts.back();
  }
  // Dense ids in first-appearance order over the (user, time)-sorted stream.
  for (const auto& s : work) {
    if (!corpus.user_ids.count(s.user_raw)) {
      corpus.user_ids[s.user_raw] = corpus.num_users++;
      corpus.user_names.push_back(s.user_raw);
    }
    for (const auto& it : s.items_raw) {
      if (!corpus.item_ids.count(it)) {
        corpus.item_ids[it] = corpus.num_items++;
        corpus.item_names.push_back(it);
      }
    }
  }

  corpus.popularity.assign(static_cast<size_t>(corpus.num_items), 0);
  corpus.user_history.assign(static_cast<size_t>(corpus.num_users), {});
  for (const auto& s : work) {
    Session out;
    out.user = corpus.user_ids.at(s.user_raw);
    out.ts = s.ts;
    out.start_ts = s.start_ts;
    out.end_ts = s.end_ts;
    out.items.reserve(s.items_raw.size());
    for (const auto& it : s.items_raw) {
      int id = corpus.item_ids.at(it);
      out.items.push_back(id);
      ++corpus.popularity[static_cast<size_t>(id)];
      corpus.user_history[static_cast<size_t>(out.user)].insert(id);
    }
    out.dwell = dwells_from_ts(out.ts);
    corpus.sessions.push_back(std::move(out));
  }
  corpus.rebuild_user_index();
  return corpus;
}

double scott_bin_width(const std::vector<double>& dwells) {
  const size_t n = dwells.size();
  if (n < 2) throw DataError("scott_bin_width: need at least 2 samples, got " +
                             std::to_string(n));
  double mean = std::accumulate(dwells.begin(), dwells.end(), 0.0) /
                static_cast<double>(n);
  double ss = 0;
  for (double d : dwells) ss += (d - mean) * (d - mean);
  double sigma = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sigma > 0))
    throw DataError("scott_bin_width: degenerate distribution (sigma == 0)");
  return sigma * std::cbrt(24.0 * std::sqrt(M_PI) / static_cast<double>(n));
}

std::vector<double> DwellBinning::edges() const {
  std::vector<double> e;
  e.reserve(static_cast<size_t>(num_bins) + 1);
  for (int i = 0; i <= num_bins; ++i) e.push_back(bin_width * i);
  return e;
}

int DwellBinning::bin_of(double dwell) const {
  if (!(bin_width > 0) || num_bins < 1)
    throw ConfigError("DwellBinning: not initialized");
  if (dwell < 0) throw DataError("DwellBinning: negative dwell");
  int idx = static_cast<int>(std::floor(dwell / bin_width));
  return std::min(idx, num_bins - 1);
}

DwellBinning build_binning(const std::vector<double>& train_dwells, double width,
                           int max_bins) {
  if (!(width > 0)) throw ConfigError("build_binning: width must be positive");
  if (max_bins < 1) throw ConfigError("build_binning: max_bins must be >= 1");
  double max_dwell = 0;
  for (double d : train_dwells) max_dwell = std::max(max_dwell, d);
  DwellBinning b;
  b.bin_width = width;
  b.num_bins = std::max(1, std::min(max_bins, static_cast<int>(std::ceil(max_dwell / width))));
  b.dwell_cap = max_dwell;
  b.from_train_only = true;
  return b;
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw DataError("percentile: empty input");
  std::sort(values.begin(), values.end());
  double rank = pct / 100.0 * static_cast<double>(values.size());
  size_t idx = static_cast<size_t>(std::ceil(rank));
  if (idx > 0) --idx;
  idx = std::min(idx, values.size() - 1);
  return values[idx];
}

std::vector<size_t> Corpus::train_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < sessions.size(); ++i)
    if (!sessions[i].is_test) out.push_back(i);
  return out;
}

std::vector<size_t> Corpus::test_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < sessions.size(); ++i)
    if (sessions[i].is_test) out.push_back(i);
  return out;
}

size_t Corpus::train_pair_count() const {
  size_t n = 0;
  for (const auto& s : sessions)
    if (!s.is_test) n += s.num_pairs();
  return n;
}

void Corpus::rebuild_user_index() {
  sessions_by_user.assign(static_cast<size_t>(num_users), {});
  for (size_t i = 0; i < sessions.size(); ++i)
    sessions_by_user[static_cast<size_t>(sessions[i].user)].push_back(i);
}

std::vector<double> collect_train_dwells(const Corpus& corpus) {
  std::vector<double> out;
  for (const auto& s : corpus.sessions) {
    if (s.is_test) continue;
    out.insert(out.end(), s.dwell.begin(), s.dwell.end());
  }
  return out;
}

int64_t boundary_for_fraction(const Corpus& corpus, double test_fraction) {
  if (!(test_fraction > 0) || !(test_fraction < 1))
    throw ConfigError("test_fraction must be in (0,1)");
  std::vector<int64_t> ends;
  ends.reserve(corpus.sessions.size());
  for (const auto& s : corpus.sessions) ends.push_back(s.end_ts);
  std::sort(ends.begin(), ends.end());
  size_t idx = static_cast<size_t>(
      std::floor((1.0 - test_fraction) * static_cast<double>(ends.size())));
  if (idx >= ends.size()) idx = ends.size() - 1;
  if (idx > 0) --idx;  // boundary itself stays in train (end_ts > boundary is test)
  return ends[idx];
}

Corpus split_train_test(const Corpus& corpus, int64_t boundary_ts,
                        const SplitOptions& opt) {
  int64_t lo = INT64_MAX, hi = INT64_MIN;
  for (const auto& s : corpus.sessions) {
    lo = std::min(lo, s.end_ts);
    hi = std::max(hi, s.end_ts);
  }
  if (corpus.sessions.empty() || boundary_ts < lo || boundary_ts >= hi) {
    std::string range = corpus.sessions.empty()
                            ? "empty corpus"
                            : "[" + std::to_string(lo) + "," + std::to_string(hi) + "]";
    throw DataError("split_train_test: boundary " + std::to_string(boundary_ts) +
                    " leaves train or test empty (end_ts range " + range + ")");
  }

  Corpus out;
  // Rebuild dense maps from train sessions only, in stream order.
  for (const auto& s : corpus.sessions) {
    if (s.end_ts > boundary_ts) continue;
    const std::string& uname = corpus.user_names[static_cast<size_t>(s.user)];
    if (!out.user_ids.count(uname)) {
      out.user_ids[uname] = out.num_users++;
      out.user_names.push_back(uname);
    }
    for (int it : s.items) {
      const std::string& iname = corpus.item_names[static_cast<size_t>(it)];
      if (!out.item_ids.count(iname)) {
        out.item_ids[iname] = out.num_items++;
        out.item_names.push_back(iname);
      }
    }
  }
  if (out.num_users == 0 || out.num_items == 0)
    throw DataError("split_train_test: empty train split");

  out.popularity.assign(static_cast<size_t>(out.num_items), 0);
  out.user_history.assign(static_cast<size_t>(out.num_users), {});

  size_t test_count = 0;
  for (const auto& s : corpus.sessions) {
    const bool is_test = s.end_ts > boundary_ts;
    const std::string& uname = corpus.user_names[static_cast<size_t>(s.user)];
    auto uit = out.user_ids.find(uname);
    if (uit == out.user_ids.end()) continue;  // user unseen in train
    Session ns;
    ns.user = uit->second;
    ns.ts = s.ts;
    ns.start_ts = s.start_ts;
    ns.end_ts = s.end_ts;
    ns.is_test = is_test;
    bool ok = true;
    for (int it : s.items) {
      auto iit = out.item_ids.find(corpus.item_names[static_cast<size_t>(it)]);
      if (iit == out.item_ids.end()) {
        ok = false;  // item unseen in train: drop the whole session
        break;
      }
      ns.items.push_back(iit->second);
    }
    if (!ok) {
      if (!is_test)
        throw DataError("split_train_test: train session references unmapped item");
      continue;
    }
    ns.dwell = s.dwell;
    if (ns.dwell.size() != ns.items.size() - 1) ns.dwell = dwells_from_ts(ns.ts);
    if (!is_test) {
      for (int it : ns.items) ++out.popularity[static_cast<size_t>(it)];
      out.user_history[static_cast<size_t>(ns.user)].insert(ns.items.begin(),
                                                            ns.items.end());
    } else {
      ++test_count;
    }
    out.sessions.push_back(std::move(ns));
  }
  if (test_count == 0)
    throw DataError("split_train_test: no test sessions survive the vocabulary filter");

  // Binning is fit on train dwells only, capped at a high percentile so the
  // gamma tail does not spread the bins thin.
  std::vector<double> dwells = collect_train_dwells(out);
  double cap = percentile(dwells, opt.dwell_cap_percentile);
  for (double& d : dwells) d = std::min(d, cap);
  double width;
  try {
    width = scott_bin_width(dwells);
  } catch (const DataError&) {
    width = std::max(1.0, cap);  // degenerate spread: a single bin
  }
  out.binning = build_binning(dwells, width, opt.max_bins);
  out.binning.dwell_cap = cap;

  for (auto& s : out.sessions) {
    s.time_bins.clear();
    s.time_bins.reserve(s.dwell.size());
    for (double d : s.dwell) s.time_bins.push_back(out.binning.bin_of(d));
  }
  out.rebuild_user_index();
  return out;
}

}  // namespace asars
