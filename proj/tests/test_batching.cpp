#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "asars/batching.hpp"

using namespace asars;

namespace {

// Builds a corpus directly from (user, items, start_ts) triples; dwell 1s.
Corpus make_corpus(const std::vector<std::tuple<int, std::vector<int>, int64_t>>& specs,
                   int num_items) {
  Corpus c;
  c.num_items = num_items;
  int max_user = 0;
  for (const auto& [u, items, start] : specs) max_user = std::max(max_user, u);
  c.num_users = max_user + 1;
  for (const auto& [u, items, start] : specs) {
    Session s;
    s.user = u;
    s.items = items;
    for (size_t k = 0; k < items.size(); ++k)
      s.ts.push_back(start + static_cast<int64_t>(k));
    s.start_ts = s.ts.front();
    s.end_ts = s.ts.back();
    s.dwell.assign(items.size() - 1, 1.0);
    s.time_bins.assign(items.size() - 1, 0);
    c.sessions.push_back(std::move(s));
  }
  c.popularity.assign(static_cast<size_t>(num_items), 1);
  c.user_history.assign(static_cast<size_t>(c.num_users), {});
  c.rebuild_user_index();
  return c;
}

using Pair = std::pair<int, int>;

std::multiset<Pair> corpus_pairs(const Corpus& c) {
  std::multiset<Pair> out;
  for (const auto& s : c.sessions)
    for (size_t k = 0; k + 1 < s.items.size(); ++k)
      out.insert({s.items[k], s.items[k + 1]});
  return out;
}

std::multiset<Pair> emitted_pairs(SliceStream& stream) {
  std::multiset<Pair> out;
  BatchSlice slice;
  while (stream.next(slice)) {
    for (int b = 0; b < slice.batch_size(); ++b)
      if (slice.active_mask[static_cast<size_t>(b)])
        out.insert({slice.input_ids[static_cast<size_t>(b)],
                    slice.target_ids[static_cast<size_t>(b)]});
  }
  return out;
}

}  // namespace

TEST_CASE("session-parallel B=1 walks sessions in order with resets") {
  Corpus c = make_corpus({{0, {10, 11, 12}, 0}, {0, {13, 14}, 100}}, 20);
  SliceStream stream(c, {BatchMode::session_parallel, 1, 200});
  BatchSlice s;

  REQUIRE(stream.next(s));
  CHECK(s.input_ids[0] == 10);
  CHECK(s.target_ids[0] == 11);
  CHECK(s.reset_mask[0] == 1);
  REQUIRE(stream.next(s));
  CHECK(s.input_ids[0] == 11);
  CHECK(s.target_ids[0] == 12);
  CHECK(s.reset_mask[0] == 0);
  REQUIRE(stream.next(s));
  CHECK(s.input_ids[0] == 13);
  CHECK(s.target_ids[0] == 14);
  CHECK(s.reset_mask[0] == 1);
  CHECK_FALSE(stream.next(s));
}

TEST_CASE("session-parallel refill matches the parallel mini-batch layout") {
  // lengths 4, 2, 3: lane 1 finishes first and receives session 3 with reset
  Corpus c = make_corpus({{0, {1, 2, 3, 4}, 0}, {0, {5, 6}, 10}, {0, {7, 8, 9}, 20}}, 16);
  SliceStream stream(c, {BatchMode::session_parallel, 2, 200});
  BatchSlice s;

  REQUIRE(stream.next(s));  // step 1
  CHECK(s.input_ids == std::vector<int>{1, 5});
  CHECK(s.target_ids == std::vector<int>{2, 6});
  CHECK(s.reset_mask == std::vector<uint8_t>{1, 1});

  REQUIRE(stream.next(s));  // step 2: lane 1 refilled with third session
  CHECK(s.input_ids == std::vector<int>{2, 7});
  CHECK(s.target_ids == std::vector<int>{3, 8});
  CHECK(s.reset_mask == std::vector<uint8_t>{0, 1});

  REQUIRE(stream.next(s));  // step 3: both lanes finish their sessions
  CHECK(s.input_ids == std::vector<int>{3, 8});
  CHECK(s.active_mask == std::vector<uint8_t>{1, 1});

  // nothing left to refill: the stream ends
  CHECK_FALSE(stream.next(s));
}

TEST_CASE("both modes emit every consecutive pair exactly once") {
  Rng rng(5);
  std::vector<std::tuple<int, std::vector<int>, int64_t>> specs;
  for (int si = 0; si < 200; ++si) {
    int user = static_cast<int>(rng.uniform_index(13));
    size_t len = 2 + rng.uniform_index(9);
    std::vector<int> items;
    for (size_t k = 0; k < len; ++k)
      items.push_back(static_cast<int>(rng.uniform_index(40)));
    specs.push_back({user, items, static_cast<int64_t>(rng.uniform_index(100000))});
  }
  Corpus c = make_corpus(specs, 40);
  auto want = corpus_pairs(c);

  for (BatchMode mode : {BatchMode::session_parallel, BatchMode::user_parallel}) {
    for (int B : {1, 4, 64, 300}) {
      SliceStream stream(c, {mode, B, 200});
      CHECK(emitted_pairs(stream) == want);
      CHECK(stream.total_pairs() == want.size());
    }
  }
}

TEST_CASE("user-parallel keeps one user per lane and persists user ids") {
  Corpus c = make_corpus({{7, {1, 2, 3}, 0}, {7, {4, 5}, 100}, {9, {6, 7}, 50}}, 16);

  SUBCASE("B=1 consumes users in order") {
    SliceStream stream(c, {BatchMode::user_parallel, 1, 200});
    BatchSlice s;
    std::vector<int> users, inputs;
    while (stream.next(s)) {
      users.push_back(s.user_ids[0]);
      inputs.push_back(s.input_ids[0]);
    }
    CHECK(users == std::vector<int>{7, 7, 7, 9});
    CHECK(inputs == std::vector<int>{1, 2, 4, 6});
  }

  SUBCASE("lane continuity: a user never straddles lanes") {
    Rng rng(17);
    std::vector<std::tuple<int, std::vector<int>, int64_t>> specs;
    for (int si = 0; si < 120; ++si)
      specs.push_back({static_cast<int>(rng.uniform_index(9)),
                       {static_cast<int>(rng.uniform_index(30)),
                        static_cast<int>(rng.uniform_index(30)),
                        static_cast<int>(rng.uniform_index(30))},
                       static_cast<int64_t>(rng.uniform_index(100000))});
    Corpus rc = make_corpus(specs, 30);
    SliceStream stream(rc, {BatchMode::user_parallel, 3, 200});
    BatchSlice s;
    std::map<int, std::set<int>> lanes_of_user;
    while (stream.next(s))
      for (int b = 0; b < s.batch_size(); ++b)
        if (s.active_mask[static_cast<size_t>(b)])
          lanes_of_user[s.user_ids[static_cast<size_t>(b)]].insert(b);
    for (const auto& [user, lanes] : lanes_of_user) CHECK(lanes.size() == 1);
  }
}

TEST_CASE("truncate splits long sessions and discards the cut gap") {
  Session s;
  s.user = 0;
  s.items = {1, 2, 3, 4, 5};
  s.ts = {0, 10, 30, 60, 100};
  s.dwell = {10, 20, 30, 40};
  s.time_bins = {0, 1, 2, 3};
  s.start_ts = 0;
  s.end_ts = 100;

  SUBCASE("short sessions unchanged") {
    auto frags = truncate_session(s, 200);
    REQUIRE(frags.size() == 1);
    CHECK(frags[0].items == s.items);
    CHECK(frags[0].dwell == s.dwell);
  }

  SUBCASE("length 5 with max 3 gives fragments 3 and 2") {
    auto frags = truncate_session(s, 3);
    REQUIRE(frags.size() == 2);
    CHECK(frags[0].items == std::vector<int>{1, 2, 3});
    CHECK(frags[0].dwell == std::vector<double>{10, 20});
    CHECK(frags[1].items == std::vector<int>{4, 5});
    CHECK(frags[1].dwell == std::vector<double>{40});  // the 30s cut gap is gone
    CHECK(frags[1].time_bins == std::vector<int>{3});
    CHECK(frags[0].start_ts == 0);
    CHECK(frags[1].start_ts == 60);
  }

  SUBCASE("emitted pairs drop by one per cut") {
    for (int max_len : {2, 3, 4}) {
      auto frags = truncate_session(s, max_len);
      size_t pairs = 0;
      for (const auto& f : frags) pairs += f.num_pairs();
      // counting oracle: original pairs minus number of cuts (a dropped
      // trailing singleton fragment still counts as its cut)
      size_t cuts = (s.items.size() + static_cast<size_t>(max_len) - 1) /
                        static_cast<size_t>(max_len) - 1;
      CHECK(pairs == s.num_pairs() - cuts);
    }
  }

  CHECK_THROWS_AS(truncate_session(s, 1), ConfigError);
}

TEST_CASE("slice stream is a pure function of corpus, B, and mode") {
  Rng rng(23);
  std::vector<std::tuple<int, std::vector<int>, int64_t>> specs;
  for (int si = 0; si < 40; ++si)
    specs.push_back({static_cast<int>(rng.uniform_index(5)),
                     {static_cast<int>(rng.uniform_index(10)),
                      static_cast<int>(rng.uniform_index(10)),
                      static_cast<int>(rng.uniform_index(10))},
                     static_cast<int64_t>(rng.uniform_index(5000))});
  Corpus c = make_corpus(specs, 10);

  auto record = [&](BatchMode mode) {
    SliceStream stream(c, {mode, 4, 200});
    std::vector<std::vector<int>> all;
    BatchSlice s;
    while (stream.next(s)) {
      all.push_back(s.input_ids);
      all.push_back(s.target_ids);
      std::vector<int> masks;
      for (size_t b = 0; b < s.reset_mask.size(); ++b)
        masks.push_back(s.reset_mask[b] * 2 + s.active_mask[b]);
      all.push_back(masks);
    }
    return all;
  };
  CHECK(record(BatchMode::session_parallel) == record(BatchMode::session_parallel));
  CHECK(record(BatchMode::user_parallel) == record(BatchMode::user_parallel));

  // restart reproduces the stream
  SliceStream stream(c, {BatchMode::session_parallel, 4, 200});
  auto first = emitted_pairs(stream);
  stream.restart();
  auto second = emitted_pairs(stream);
  CHECK(first == second);

  // seeded shuffle keeps coverage
  SliceStream shuffled(c, {BatchMode::session_parallel, 4, 200, false, 77});
  CHECK(emitted_pairs(shuffled) == corpus_pairs(c));
}

TEST_CASE("reset flags fire exactly on first steps of each session") {
  Rng rng(29);
  std::vector<std::tuple<int, std::vector<int>, int64_t>> specs;
  for (int si = 0; si < 50; ++si) {
    size_t len = 2 + rng.uniform_index(6);
    std::vector<int> items;
    for (size_t k = 0; k < len; ++k) items.push_back(static_cast<int>(rng.uniform_index(12)));
    specs.push_back({static_cast<int>(rng.uniform_index(4)), items,
                     static_cast<int64_t>(rng.uniform_index(9999))});
  }
  Corpus c = make_corpus(specs, 12);
  SliceStream stream(c, {BatchMode::session_parallel, 8, 200});
  BatchSlice s;
  size_t resets = 0, active_steps = 0;
  while (stream.next(s))
    for (int b = 0; b < s.batch_size(); ++b)
      if (s.active_mask[static_cast<size_t>(b)]) {
        ++active_steps;
        if (s.reset_mask[static_cast<size_t>(b)]) ++resets;
      }
  CHECK(resets == c.sessions.size());  // one reset per session
  CHECK(active_steps == stream.total_pairs());
}
