#pragma once

#include <map>
#include <vector>

#include "asars/model.hpp"

namespace asars {

// Mean of 1/rank with ranks above K contributing zero. Ranks are 1-based.
double mrr_at_k(const std::vector<int>& ranks, int k);

// Fraction of ranks <= K (single-target next-item setting: recall == hit rate).
double recall_at_k(const std::vector<int>& ranks, int k);

struct MetricsReport {
  std::vector<int> ks;
  std::map<int, double> mrr;
  std::map<int, double> recall;
  size_t n_predictions = 0;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  uint64_t checkpoint_hash = 0;
  std::string dataset;
  std::string variant;
};

// 1-based rank of `target` in a dense score row; ties broken by score
// descending then item id ascending.
template <typename S>
int rank_of_target(const Mat<S>& scores, int row, int target) {
  const S st = scores(row, target);
  int rank = 1;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    if (j == target) continue;
    const S sj = scores(row, j);
    if (sj > st || (sj == st && j < target)) ++rank;
  }
  return rank;
}

// Teacher-forced replay of every test session: the hidden state advances on
// observed items while each next item is ranked against the full vocabulary.
// Never mutates parameters.
template <typename S>
std::vector<int> collect_test_ranks(Model<S>& m, const Corpus& corpus, int batch_size) {
  BatchPlanOptions opt;
  opt.mode = BatchMode::session_parallel;
  opt.batch_size = batch_size;
  opt.max_sequence_len = m.cfg.max_session_len;
  opt.include_test = true;
  SliceStream stream(corpus, opt);

  std::vector<int> ranks;
  LaneCarry<S> carry;
  BatchSlice slice;
  Graph<S> g;
  while (stream.next(slice)) {
    g.reset();
    auto q = model_step(g, m, slice, carry);
    auto scores = score_items(g, m, q, {}, make_context(m, slice));
    for (int b = 0; b < slice.batch_size(); ++b) {
      if (!slice.active_mask[static_cast<size_t>(b)]) continue;
      int target = slice.target_ids[static_cast<size_t>(b)];
      if (target < 0 || target >= m.cfg.num_items)
        throw IndexError("evaluate: test item " + std::to_string(target) +
                         " outside train vocabulary");
      ranks.push_back(rank_of_target(scores.value(), b, target));
    }
  }
  return ranks;
}

template <typename S>
MetricsReport evaluate(Model<S>& m, const Corpus& corpus, const std::vector<int>& ks,
                       int batch_size = 64) {
  if (corpus.test_indices().empty()) throw DataError("evaluate: empty test split");
  auto ranks = collect_test_ranks(m, corpus, batch_size);
  MetricsReport rep;
  rep.ks = ks;
  rep.variant = to_string(m.cfg.variant);
  rep.n_predictions = ranks.size();
  for (int k : ks) {
    rep.mrr[k] = mrr_at_k(ranks, k);
    rep.recall[k] = recall_at_k(ranks, k);
  }
  return rep;
}

// Train-frequency ranker, ties by item id ascending; the acceptance
// reference point.
class PopularityBaseline {
 public:
  explicit PopularityBaseline(const std::vector<int64_t>& popularity);

  const std::vector<int>& ranking() const { return ranking_; }
  int rank_of(int item) const { return rank_of_[static_cast<size_t>(item)]; }

  std::vector<int> test_ranks(const Corpus& corpus) const;
  MetricsReport evaluate(const Corpus& corpus, const std::vector<int>& ks) const;

 private:
  std::vector<int> ranking_;  // items ordered best-first
  std::vector<int> rank_of_;  // 1-based rank per item
};

}  // namespace asars
