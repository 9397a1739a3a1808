#pragma once

#include <string>
#include <vector>

#include "asars/dataprep.hpp"

namespace asars {

enum class SynthProfile { markov, dwell_signal };

SynthProfile synth_profile_from_string(const std::string& s);

// Seeded event-log generators used for the learning-signal checks.
//
// markov: items live in clusters; the next cluster follows a planted
// first-order transition row, so a sequence model has real signal while
// item popularity stays near uniform.
//
// dwell_signal: additionally, the gap before the next click tells whether
// the walk stays in the cluster (long dwell) or advances to the next one
// (short dwell) - time-aware variants can read it, item-only ones cannot.
struct SynthOptions {
  SynthProfile profile = SynthProfile::markov;
  uint64_t seed = 7;
  int num_events = 100000;
  int num_items = 1000;
  int num_users = 200;
  int num_clusters = 25;
  double stay_prob = 0.5;           // dwell_signal only
  double long_dwell_shape = 4.0;    // stay gaps ~ gamma(4, 20): mean 80s
  double long_dwell_scale = 20.0;
  double short_dwell_shape = 2.0;   // advance gaps ~ gamma(2, 3): mean 6s
  double short_dwell_scale = 3.0;
};

std::vector<Event> synth_events(const SynthOptions& opt);

// Row-stochastic planted cluster matrix (the estimation oracle target).
std::vector<std::vector<double>> planted_cluster_matrix(const SynthOptions& opt);

int cluster_of_item(const SynthOptions& opt, int item);

void write_event_csv(const std::string& path, const std::vector<Event>& events);

}  // namespace asars
