#include "asars/batching.hpp"

#include <algorithm>
#include <numeric>

namespace asars {

std::vector<Session> truncate_session(const Session& s, int max_len) {
  if (max_len < 2) throw ConfigError("truncate_session: max_len must be >= 2");
  std::vector<Session> out;
  const size_t n = s.items.size();
  const size_t step = static_cast<size_t>(max_len);
  for (size_t start = 0; start < n; start += step) {
    size_t end = std::min(n, start + step);
    if (end - start < 2) break;  // a trailing single item emits no pairs
    Session frag;
    frag.user = s.user;
    frag.is_test = s.is_test;
    frag.items.assign(s.items.begin() + static_cast<long>(start),
                      s.items.begin() + static_cast<long>(end));
    if (!s.ts.empty()) {
      frag.ts.assign(s.ts.begin() + static_cast<long>(start),
                     s.ts.begin() + static_cast<long>(end));
      frag.start_ts = frag.ts.front();
      frag.end_ts = frag.ts.back();
    } else {
      frag.start_ts = s.start_ts;
      frag.end_ts = s.end_ts;
    }
    // the dwell across the cut is discarded with the cut
    if (!s.dwell.empty())
      frag.dwell.assign(s.dwell.begin() + static_cast<long>(start),
                        s.dwell.begin() + static_cast<long>(end - 1));
    if (!s.time_bins.empty())
      frag.time_bins.assign(s.time_bins.begin() + static_cast<long>(start),
                            s.time_bins.begin() + static_cast<long>(end - 1));
    out.push_back(std::move(frag));
  }
  return out;
}

SliceStream::SliceStream(const Corpus& corpus, const BatchPlanOptions& opt) : opt_(opt) {
  if (opt.batch_size < 1) throw ConfigError("SliceStream: batch_size must be >= 1");

  for (const auto& s : corpus.sessions) {
    if (s.is_test != opt.include_test) continue;
    for (auto& frag : truncate_session(s, opt.max_sequence_len))
      sessions_.push_back(std::move(frag));
  }
  for (const auto& s : sessions_) total_pairs_ += s.num_pairs();

  // Deterministic consumption order: session start time, ties by index.
  std::vector<int> by_time(sessions_.size());
  std::iota(by_time.begin(), by_time.end(), 0);
  std::stable_sort(by_time.begin(), by_time.end(), [&](int a, int b) {
    return sessions_[static_cast<size_t>(a)].start_ts <
           sessions_[static_cast<size_t>(b)].start_ts;
  });

  if (opt_.mode == BatchMode::session_parallel) {
    order_ = by_time;
    if (opt_.shuffle_seed != 0) {
      Rng rng(opt_.shuffle_seed);
      for (size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[rng.uniform_index(i)]);
    }
  } else {
    // Group fragments per user; a user occupies exactly one lane until all
    // their sessions are consumed.
    std::map<int, size_t> user_slot;
    for (int idx : by_time) {
      int u = sessions_[static_cast<size_t>(idx)].user;
      auto it = user_slot.find(u);
      if (it == user_slot.end()) {
        user_slot[u] = user_queue_.size();
        user_queue_.emplace_back();
        it = user_slot.find(u);
      }
      user_queue_[it->second].push_back(idx);
    }
    if (opt_.shuffle_seed != 0) {
      Rng rng(opt_.shuffle_seed);
      for (size_t i = user_queue_.size(); i > 1; --i)
        std::swap(user_queue_[i - 1], user_queue_[rng.uniform_index(i)]);
    }
  }
  restart();
}

void SliceStream::restart() {
  next_session_ = 0;
  next_user_slot_ = 0;
  user_next_frag_.assign(user_queue_.size(), 0);
  lanes_.assign(static_cast<size_t>(opt_.batch_size), Lane{});
  lane_user_slot_.assign(static_cast<size_t>(opt_.batch_size), -1);
  started_ = true;
}

bool SliceStream::refill(Lane& lane) {
  size_t lane_idx = static_cast<size_t>(&lane - lanes_.data());
  if (opt_.mode == BatchMode::session_parallel) {
    while (next_session_ < order_.size()) {
      int idx = order_[next_session_++];
      if (session_at(idx).num_pairs() == 0) continue;
      lane.session = idx;
      lane.pos = 0;
      lane.fresh = true;
      return true;
    }
    return false;
  }
  // user_parallel: continue the lane's current user before taking a new one
  for (;;) {
    int slot = lane_user_slot_[lane_idx];
    if (slot >= 0) {
      auto& frags = user_queue_[static_cast<size_t>(slot)];
      size_t& cursor = user_next_frag_[static_cast<size_t>(slot)];
      while (cursor < frags.size()) {
        int idx = frags[cursor++];
        if (session_at(idx).num_pairs() == 0) continue;
        lane.session = idx;
        lane.pos = 0;
        lane.fresh = true;
        return true;
      }
    }
    if (next_user_slot_ >= user_queue_.size()) return false;
    lane_user_slot_[lane_idx] = static_cast<int>(next_user_slot_++);
  }
}

bool SliceStream::next(BatchSlice& out) {
  if (!started_) restart();
  const int B = opt_.batch_size;

  bool any_active = false;
  for (auto& lane : lanes_) {
    if (lane.session < 0 && !refill(lane)) continue;
    any_active = true;
  }
  if (!any_active) return false;

  out.input_ids.assign(static_cast<size_t>(B), 0);
  out.target_ids.assign(static_cast<size_t>(B), 0);
  out.time_bin_ids.assign(static_cast<size_t>(B), 0);
  out.user_ids.assign(static_cast<size_t>(B), 0);
  out.step_ts.assign(static_cast<size_t>(B), 0);
  out.reset_mask.assign(static_cast<size_t>(B), 0);
  out.active_mask.assign(static_cast<size_t>(B), 0);

  for (int b = 0; b < B; ++b) {
    Lane& lane = lanes_[static_cast<size_t>(b)];
    if (lane.session < 0) continue;
    const Session& s = session_at(lane.session);
    out.active_mask[static_cast<size_t>(b)] = 1;
    out.reset_mask[static_cast<size_t>(b)] = lane.fresh ? 1 : 0;
    out.input_ids[static_cast<size_t>(b)] = s.items[lane.pos];
    out.target_ids[static_cast<size_t>(b)] = s.items[lane.pos + 1];
    if (!s.time_bins.empty())
      out.time_bin_ids[static_cast<size_t>(b)] = s.time_bins[lane.pos];
    out.user_ids[static_cast<size_t>(b)] = s.user;
    out.step_ts[static_cast<size_t>(b)] =
        s.ts.empty() ? s.start_ts : s.ts[lane.pos];
    lane.fresh = false;
    ++lane.pos;
    if (lane.pos + 1 >= s.items.size()) lane.session = -1;  // consumed
  }
  return true;
}

}  // namespace asars
