#include <algorithm>
#include <numeric>

#include "asars/eval.hpp"

namespace asars {

double mrr_at_k(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) throw DataError("mrr_at_k: empty rank list");
  if (k < 1) throw ConfigError("mrr_at_k: K must be >= 1");
  double total = 0;
  for (int r : ranks) {
    if (r < 1) throw DataError("mrr_at_k: ranks are 1-based");
    if (r <= k) total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

double recall_at_k(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) throw DataError("recall_at_k: empty rank list");
  if (k < 1) throw ConfigError("recall_at_k: K must be >= 1");
  size_t hits = 0;
  for (int r : ranks) {
    if (r < 1) throw DataError("recall_at_k: ranks are 1-based");
    if (r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

PopularityBaseline::PopularityBaseline(const std::vector<int64_t>& popularity) {
  const int v = static_cast<int>(popularity.size());
  ranking_.resize(static_cast<size_t>(v));
  std::iota(ranking_.begin(), ranking_.end(), 0);
  std::stable_sort(ranking_.begin(), ranking_.end(), [&](int a, int b) {
    if (popularity[static_cast<size_t>(a)] != popularity[static_cast<size_t>(b)])
      return popularity[static_cast<size_t>(a)] > popularity[static_cast<size_t>(b)];
    return a < b;
  });
  rank_of_.assign(static_cast<size_t>(v), 0);
  for (int pos = 0; pos < v; ++pos)
    rank_of_[static_cast<size_t>(ranking_[static_cast<size_t>(pos)])] = pos + 1;
}

std::vector<int> PopularityBaseline::test_ranks(const Corpus& corpus) const {
  std::vector<int> ranks;
  for (size_t idx : corpus.test_indices()) {
    const Session& s = corpus.sessions[idx];
    for (size_t t = 1; t < s.items.size(); ++t)
      ranks.push_back(rank_of(s.items[t]));
  }
  return ranks;
}

MetricsReport PopularityBaseline::evaluate(const Corpus& corpus,
                                           const std::vector<int>& ks) const {
  auto ranks = test_ranks(corpus);
  if (ranks.empty()) throw DataError("popularity baseline: empty test split");
  MetricsReport rep;
  rep.ks = ks;
  rep.variant = "popularity";
  rep.n_predictions = ranks.size();
  for (int k : ks) {
    rep.mrr[k] = mrr_at_k(ranks, k);
    rep.recall[k] = recall_at_k(ranks, k);
  }
  return rep;
}

}  // namespace asars
