#include "asars/synth.hpp"

#include <algorithm>
#include <fstream>

namespace asars {

namespace {

constexpr int64_t kBaseTs = 1600000000;

int items_per_cluster(const SynthOptions& opt) {
  return std::max(1, opt.num_items / opt.num_clusters);
}

int pick_item_in_cluster(const SynthOptions& opt, int cluster, Rng& rng) {
  const int per = items_per_cluster(opt);
  int lo = cluster * per;
  int hi = (cluster == opt.num_clusters - 1) ? opt.num_items : lo + per;
  return lo + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(hi - lo)));
}

int sample_row(const std::vector<double>& row, Rng& rng) {
  double u = rng.uniform();
  double acc = 0;
  for (size_t c = 0; c < row.size(); ++c) {
    acc += row[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(row.size()) - 1;
}

int64_t clamp_gap(double g) {
  return std::clamp(static_cast<int64_t>(g), int64_t{1}, int64_t{600});
}

}  // namespace

SynthProfile synth_profile_from_string(const std::string& s) {
  if (s == "markov") return SynthProfile::markov;
  if (s == "dwell-signal" || s == "dwell_signal") return SynthProfile::dwell_signal;
  throw ConfigError("unknown synth profile '" + s + "'");
}

int cluster_of_item(const SynthOptions& opt, int item) {
  return std::min(item / items_per_cluster(opt), opt.num_clusters - 1);
}

std::vector<std::vector<double>> planted_cluster_matrix(const SynthOptions& opt) {
  const int C = opt.num_clusters;
  std::vector<std::vector<double>> m(static_cast<size_t>(C),
                                     std::vector<double>(static_cast<size_t>(C), 0.0));
  for (int c = 0; c < C; ++c) {
    auto& row = m[static_cast<size_t>(c)];
    if (opt.profile == SynthProfile::dwell_signal) {
      row[static_cast<size_t>(c)] = opt.stay_prob;
      row[static_cast<size_t>((c + 1) % C)] += 1.0 - opt.stay_prob;
    } else {
      row[static_cast<size_t>((c + 1) % C)] += 0.65;
      row[static_cast<size_t>((c + 7) % C)] += 0.25;
      for (int off : {2, 3, 4, 5}) row[static_cast<size_t>((c + off) % C)] += 0.025;
    }
  }
  return m;
}

std::vector<Event> synth_events(const SynthOptions& opt) {
  if (opt.num_clusters < 2 || opt.num_items < opt.num_clusters)
    throw ConfigError("synth: need at least 2 clusters and items >= clusters");
  Rng rng(opt.seed);
  const auto matrix = planted_cluster_matrix(opt);

  std::vector<Event> events;
  events.reserve(static_cast<size_t>(opt.num_events));
  // Each user walks their own timeline; sessions are spaced well past the
  // one-hour sessionization gap.
  std::vector<int64_t> user_clock(static_cast<size_t>(opt.num_users), kBaseTs);

  int user = 0;
  while (static_cast<int>(events.size()) < opt.num_events) {
    const std::string uname = "u" + std::to_string(user);
    int64_t t = user_clock[static_cast<size_t>(user)];
    const int len = 2 + static_cast<int>(std::min<uint64_t>(rng.poisson(6.0), 48));

    int cluster = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(opt.num_clusters)));
    int item = pick_item_in_cluster(opt, cluster, rng);
    for (int k = 0; k < len && static_cast<int>(events.size()) < opt.num_events; ++k) {
      events.push_back(Event{uname, "i" + std::to_string(item), t, std::nullopt});
      if (k + 1 == len) break;
      int64_t gap;
      int next_cluster;
      if (opt.profile == SynthProfile::dwell_signal) {
        const bool stay = rng.uniform() < opt.stay_prob;
        next_cluster = stay ? cluster : (cluster + 1) % opt.num_clusters;
        gap = clamp_gap(stay ? rng.gamma(opt.long_dwell_shape, opt.long_dwell_scale)
                             : rng.gamma(opt.short_dwell_shape, opt.short_dwell_scale));
      } else {
        next_cluster = sample_row(matrix[static_cast<size_t>(cluster)], rng);
        gap = clamp_gap(rng.gamma(2.0, 5.0));
      }
      t += gap;
      cluster = next_cluster;
      item = pick_item_in_cluster(opt, cluster, rng);
    }
    // inter-session pause: 2h..50h
    user_clock[static_cast<size_t>(user)] =
        t + 7200 + static_cast<int64_t>(rng.uniform_index(48 * 3600));
    user = (user + 1) % opt.num_users;
  }
  return events;
}

void write_event_csv(const std::string& path, const std::vector<Event>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "user_id,item_id,timestamp\n";
  for (const auto& e : events)
    out << e.user_raw << ',' << e.item_raw << ',' << e.timestamp << '\n';
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace asars
