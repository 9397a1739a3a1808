#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "asars/common.hpp"

namespace asars {

struct Event {
  std::string user_raw;
  std::string item_raw;
  int64_t timestamp = 0;  // seconds since epoch
  std::optional<std::string> session_raw;
};

// A sessionized interaction run. `dwell` holds the n-1 gaps between
// consecutive clicks (the trailing gap is discarded); `time_bins` is filled
// once a DwellBinning exists.
struct Session {
  int user = -1;
  std::vector<int> items;
  std::vector<int64_t> ts;          // per-event timestamps, kept for refiltering
  std::vector<double> dwell;        // size items.size()-1, always > 0
  std::vector<int> time_bins;       // size items.size()-1 once assigned
  int64_t start_ts = 0;
  int64_t end_ts = 0;
  bool is_test = false;

  size_t length() const { return items.size(); }
  size_t num_pairs() const { return items.empty() ? 0 : items.size() - 1; }
};

// Raw-id session used between sessionize and id remapping.
struct RawSession {
  std::string user_raw;
  std::vector<std::string> items_raw;
  std::vector<int64_t> ts;
  int64_t start_ts = 0;
  int64_t end_ts = 0;
};

struct DwellBinning {
  double bin_width = 0;
  int num_bins = 0;
  double dwell_cap = 0;     // dwells are clamped here before width/edge fitting
  bool from_train_only = true;

  std::vector<double> edges() const;
  int bin_of(double dwell) const;  // left-closed, right-open; overflow -> last bin
};

struct FilterThresholds {
  int min_item_events = 10;
  int min_session_len = 2;
  int min_user_sessions = 10;
};

// Sessionized, filtered, id-remapped dataset with everything the model and
// samplers need. Ids are dense in [0, num_items) / [0, num_users).
struct Corpus {
  std::vector<Session> sessions;       // train first is not guaranteed; check is_test
  int num_items = 0;
  int num_users = 0;
  std::vector<std::string> item_names;  // contiguous id -> raw id
  std::vector<std::string> user_names;
  std::map<std::string, int> item_ids;  // raw id -> contiguous id
  std::map<std::string, int> user_ids;
  std::vector<int64_t> popularity;      // train event count per item
  std::vector<std::set<int>> user_history;  // train item set per user
  std::vector<std::vector<size_t>> sessions_by_user;  // indices into sessions
  DwellBinning binning;

  std::vector<size_t> train_indices() const;
  std::vector<size_t> test_indices() const;
  size_t train_pair_count() const;
  void rebuild_user_index();
};

// CSV contract: header row, columns user_id,item_id,timestamp[,session_id],
// UTF-8, integer-second timestamps. Malformed rows raise DataError with the
// 1-based line number.
std::vector<Event> parse_event_csv(std::istream& in);
std::vector<Event> load_event_csv(const std::string& path);

// MovieLens-1M ratings.dat convenience reader (user::movie::rating::ts).
std::vector<Event> load_movielens_dat(const std::string& path);

// Splits per-user event streams on inactivity >= gap_seconds. Provided
// session ids take precedence over gap splitting. Ties in timestamp are
// ordered by raw item id ascending, so the result is permutation-invariant.
std::vector<RawSession> sessionize(std::vector<Event> events, int64_t gap_seconds = 3600);

// Iterates item-support / session-length / user-session-count filters to a
// fixed point, then remaps surviving ids to dense integers (first-appearance
// order) and records popularity counts and user histories.
Corpus filter_support(const std::vector<RawSession>& sessions, const FilterThresholds& t);

// Scott's rule bin width: sigma * cbrt(24 * sqrt(pi) / n).
double scott_bin_width(const std::vector<double>& dwells);

DwellBinning build_binning(const std::vector<double>& train_dwells, double width,
                           int max_bins = 512);

struct SplitOptions {
  double dwell_cap_percentile = 99.5;
  int max_bins = 512;
};

// Sessions ending after `boundary_ts` become test sessions. Test sessions
// with users or items unseen in train are dropped whole; id maps, binning,
// popularity and histories are rebuilt from train only.
Corpus split_train_test(const Corpus& corpus, int64_t boundary_ts,
                        const SplitOptions& opt = {});

// end_ts quantile used when only a test fraction is configured.
int64_t boundary_for_fraction(const Corpus& corpus, double test_fraction);

// Gathers all train dwells (clamped to the binning cap when clamp is set).
std::vector<double> collect_train_dwells(const Corpus& corpus);

double percentile(std::vector<double> values, double pct);

}  // namespace asars
