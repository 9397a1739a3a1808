#pragma once

#include <cstdint>
#include <vector>

#include "asars/dataprep.hpp"

namespace asars {

// One step of a parallel mini-batch. Lane b trains (input -> target) with
// the dwell bin of the gap between them; reset marks the first step of a
// session in that lane, and inactive lanes keep their last ids but must be
// ignored by the model and the loss.
struct BatchSlice {
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  std::vector<int> time_bin_ids;
  std::vector<int> user_ids;
  std::vector<int64_t> step_ts;  // input-event timestamps, feeds the dev() bias
  std::vector<uint8_t> reset_mask;
  std::vector<uint8_t> active_mask;

  int batch_size() const { return static_cast<int>(input_ids.size()); }
  int active_count() const {
    int n = 0;
    for (uint8_t a : active_mask) n += a ? 1 : 0;
    return n;
  }
};

enum class BatchMode { session_parallel, user_parallel };

struct BatchPlanOptions {
  BatchMode mode = BatchMode::session_parallel;
  int batch_size = 64;
  int max_sequence_len = 200;
  bool include_test = false;  // default: train sessions only
  // Optional seeded shuffle of session order (session_parallel) or user
  // order (user_parallel); 0 keeps deterministic start-time order.
  uint64_t shuffle_seed = 0;
};

// Splits sessions longer than max_len into consecutive fragments; the dwell
// at each cut is discarded, so emitted pairs drop by one per cut.
std::vector<Session> truncate_session(const Session& s, int max_len);

// Deterministic stream of BatchSlices covering every consecutive pair of
// every selected session exactly once per pass.
class SliceStream {
 public:
  SliceStream(const Corpus& corpus, const BatchPlanOptions& opt);

  // Returns false when all sessions are consumed.
  bool next(BatchSlice& out);

  void restart();

  size_t total_pairs() const { return total_pairs_; }

 private:
  struct Lane {
    int session = -1;  // index into sessions_
    size_t pos = 0;
    bool fresh = true;  // next emitted step carries reset
  };

  const Session& session_at(int idx) const { return sessions_[static_cast<size_t>(idx)]; }
  bool refill(Lane& lane);

  std::vector<Session> sessions_;             // truncated fragments, ordered
  std::vector<std::vector<int>> user_queue_;  // user-parallel: fragments per user slot
  std::vector<int> order_;                    // session_parallel consumption order
  BatchPlanOptions opt_;
  size_t next_session_ = 0;  // cursor into order_ / user_queue_
  size_t next_user_slot_ = 0;
  std::vector<size_t> user_next_frag_;
  std::vector<Lane> lanes_;
  std::vector<int> lane_user_slot_;
  size_t total_pairs_ = 0;
  bool started_ = false;
};

}  // namespace asars
