#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <utility>
#include <vector>

#include "sessrnn/session_data.hpp"
#include "synthetic.hpp"

using namespace sessrnn;

namespace {

Dataset from_csv(const std::string& text, IngestOptions opts = {}) {
  std::istringstream in(text);
  return ingest_csv(in, opts);
}

std::vector<std::string> item_names(const Session& s, const ItemVocab& v) {
  std::vector<std::string> out;
  for (auto i : s.items) out.push_back(v.item(i));
  return out;
}

}  // namespace

TEST(Ingest, DropsLengthOneSessions) {
  auto ds = from_csv("SessionId,ItemId,Time\n1,a,10\n1,b,20\n1,c,30\n2,d,15\n");
  ASSERT_EQ(ds.store.size(), 1u);
  EXPECT_EQ(ds.store[0].length(), 3u);
  EXPECT_EQ(ds.vocab.size(), 3u);
  EXPECT_FALSE(ds.vocab.find("d"));
  EXPECT_EQ(ds.vocab.total_events(), 3u);
}

TEST(Ingest, SortsEventsWithinSessionStably) {
  auto ds = from_csv("SessionId,ItemId,Time\ns,c,30\ns,a,10\ns,x,20\ns,y,20\n");
  ASSERT_EQ(ds.store.size(), 1u);
  EXPECT_EQ(item_names(ds.store[0], ds.vocab), (std::vector<std::string>{"a", "x", "y", "c"}));
}

TEST(Ingest, ColumnsInAnyOrderAndCrlf) {
  auto ds = from_csv("Time,ItemId,SessionId\r\n5,i1,s\r\n6,i2,s\r\n");
  ASSERT_EQ(ds.store.size(), 1u);
  EXPECT_EQ(ds.store[0].times, (std::vector<std::int64_t>{5, 6}));
}

TEST(Ingest, MalformedRecordReportsLine) {
  try {
    from_csv("SessionId,ItemId,Time\n1,a,10\n1,b,notanumber\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(from_csv("SessionId,ItemId,Time\n1,a\n"), ParseError);
  EXPECT_THROW(from_csv("Foo,Bar\n"), ParseError);
  EXPECT_THROW(from_csv("SessionId,ItemId,Time\n1,,5\n"), ParseError);
  EXPECT_THROW(from_csv("SessionId,ItemId,Time\n1,a,-5\n"), ParseError);
}

TEST(Ingest, EmptyInputGivesEmptyStore) {
  EXPECT_TRUE(from_csv("").store.empty());
  EXPECT_TRUE(from_csv("SessionId,ItemId,Time\n").store.empty());
}

TEST(Ingest, BotFilterDropsLongSessions) {
  std::string csv = "SessionId,ItemId,Time\n";
  for (int k = 0; k < 5; ++k) csv += "long,i" + std::to_string(k) + "," + std::to_string(k) + "\n";
  csv += "short,a,1\nshort,b,2\n";
  IngestOptions opts;
  opts.max_session_length = 4;
  auto ds = from_csv(csv, opts);
  ASSERT_EQ(ds.store.size(), 1u);
  EXPECT_EQ(ds.store[0].id, "short");
}

TEST(Ingest, IsoTimestamps) {
  EXPECT_EQ(parse_iso8601("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(parse_iso8601("1970-01-02T00:00:01.5Z"), 86401500);
  EXPECT_EQ(parse_iso8601("2014-04-07T10:51:09.277Z"), 1396867869277);
  EXPECT_EQ(parse_iso8601("1970-01-01T01:00:00+01:00"), 0);
  EXPECT_FALSE(parse_iso8601("2014-13-07T10:51:09Z"));
  EXPECT_FALSE(parse_iso8601("yesterday"));
  IngestOptions opts;
  opts.iso_timestamps = true;
  auto ds = from_csv("SessionId,ItemId,Time\n1,a,1970-01-01T00:00:02Z\n1,b,1970-01-01T00:00:01Z\n", opts);
  EXPECT_EQ(item_names(ds.store[0], ds.vocab), (std::vector<std::string>{"b", "a"}));
}

TEST(Ingest, PopularityMatchesBruteForceRecount) {
  auto events = synthetic::random_events(10, 8, 2, 6, 77);
  auto ds = ingest_events(events);
  // Recount directly from events of sessions with at least two events.
  std::map<std::string, int> per_session;
  for (const auto& e : events) ++per_session[e.session_id];
  std::map<std::string, std::uint64_t> expected;
  for (const auto& e : events)
    if (per_session[e.session_id] >= 2) ++expected[e.item_id];
  ASSERT_EQ(ds.vocab.size(), expected.size());
  for (const auto& [item, count] : expected) EXPECT_EQ(ds.vocab.popularity(*ds.vocab.find(item)), count) << item;
}

TEST(Ingest, SerializedOutputIsAFixedPoint) {
  auto ds = ingest_events(synthetic::random_events(40, 15, 1, 9, 5));
  std::ostringstream first;
  write_csv(first, ds.store, ds.vocab);
  auto again = from_csv(first.str());
  std::ostringstream second;
  write_csv(second, again.store, again.vocab);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(again.vocab, ds.vocab);
}

TEST(Ingest, SessionOrderIsStartTimeThenId) {
  auto ds = from_csv("SessionId,ItemId,Time\nb,x,5\nb,y,6\na,x,5\na,y,7\nc,x,1\nc,y,9\n");
  ASSERT_EQ(ds.store.size(), 3u);
  EXPECT_EQ(ds.store[0].id, "c");
  EXPECT_EQ(ds.store[1].id, "a");
  EXPECT_EQ(ds.store[2].id, "b");
}

TEST(Split, AllBeforeBoundaryGivesEmptyTest) {
  auto ds = from_csv("SessionId,ItemId,Time\n1,a,1\n1,b,2\n2,a,3\n2,c,4\n");
  auto split = split_train_test(ds.store, ds.vocab, 1000);
  EXPECT_EQ(split.train.size(), 2u);
  EXPECT_TRUE(split.test.empty());
}

TEST(Split, UnseenTestItemsAreRemoved) {
  auto ds = from_csv(
      "SessionId,ItemId,Time\n"
      "tr,A,1\ntr,B,2\n"
      "te,A,100\nte,X,101\nte,B,102\n"
      "te2,X,200\nte2,A,201\n");
  auto split = split_train_test(ds.store, ds.vocab, 50);
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(item_names(split.test[0], split.train_vocab), (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(split.train_vocab.size(), 2u);
  EXPECT_EQ(split.train_vocab.total_events(), 2u);
}

TEST(Split, TestIndicesStayInsideTrainVocab) {
  auto ds = ingest_events(synthetic::random_events(300, 60, 2, 8, 9));
  const auto boundary = ds.store.min_time() + (ds.store.max_time() - ds.store.min_time()) / 2;
  auto split = split_train_test(ds.store, ds.vocab, boundary);
  EXPECT_FALSE(split.train.empty());
  EXPECT_FALSE(split.test.empty());
  for (const auto& s : split.test.sessions()) {
    EXPECT_GE(s.length(), 2u);
    for (auto i : s.items) EXPECT_LT(i, split.train_vocab.size());
  }
  for (const auto& s : split.train.sessions()) EXPECT_LT(s.start_time(), boundary);
}

TEST(Split, LastDaysBoundary) {
  std::string csv = "SessionId,ItemId,Time\n";
  for (int day = 0; day < 7; ++day)
    for (int s = 0; s < 3; ++s) {
      const auto t = day * kMillisPerDay + (s + 1) * 3600000;
      const std::string id = "d" + std::to_string(day) + "s" + std::to_string(s);
      csv += id + ",a," + std::to_string(t) + "\n" + id + ",b," + std::to_string(t + 1000) + "\n";
    }
  auto ds = from_csv(csv);
  auto split = split_train_test(ds.store, ds.vocab, last_days_boundary(ds.store, 1));
  ASSERT_EQ(split.test.size(), 3u);
  for (const auto& s : split.test.sessions()) EXPECT_EQ(s.id.substr(0, 2), "d6");
  EXPECT_EQ(split.train.size(), 18u);
}

namespace {

SessionStore abc_store() {
  // S1=[a,b,c], S2=[d,e], S3=[f,g,h] with a..h = 0..7
  std::vector<Session> s(3);
  s[0] = {"S1", {0, 1, 2}, {1, 2, 3}};
  s[1] = {"S2", {3, 4}, {2, 3}};
  s[2] = {"S3", {5, 6, 7}, {3, 4, 5}};
  return SessionStore(std::move(s));
}

}  // namespace

TEST(Iterator, HandSimulatedSchedule) {
  auto store = abc_store();
  SessionParallelIterator it(store, 2);
  auto b1 = it.next();
  ASSERT_TRUE(b1);
  EXPECT_EQ(b1->inputs, (std::vector<ItemIndex>{0, 3}));
  EXPECT_EQ(b1->targets, (std::vector<ItemIndex>{1, 4}));
  EXPECT_EQ(b1->reset_mask, (std::vector<bool>{true, true}));
  auto b2 = it.next();
  ASSERT_TRUE(b2);
  EXPECT_EQ(b2->inputs, (std::vector<ItemIndex>{1, 5}));
  EXPECT_EQ(b2->targets, (std::vector<ItemIndex>{2, 6}));
  EXPECT_EQ(b2->reset_mask, (std::vector<bool>{false, true}));
  EXPECT_EQ(b2->source_lane[0], 0u);
  auto b3 = it.next();
  ASSERT_TRUE(b3);
  EXPECT_EQ(b3->inputs, (std::vector<ItemIndex>{6}));
  EXPECT_EQ(b3->targets, (std::vector<ItemIndex>{7}));
  EXPECT_EQ(b3->reset_mask, (std::vector<bool>{false}));
  EXPECT_EQ(b3->source_lane[0], 1u);
  EXPECT_FALSE(it.next());
}

TEST(Iterator, SingleSessionWidthOne) {
  std::vector<Session> s{{"x", {0, 1, 2, 3, 4}, {1, 2, 3, 4, 5}}};
  SessionStore store(std::move(s));
  SessionParallelIterator it(store, 1);
  int n = 0;
  while (it.next()) ++n;
  EXPECT_EQ(n, 4);
}

TEST(Iterator, RejectsZeroWidth) {
  SessionStore store;
  EXPECT_THROW(SessionParallelIterator(store, 0), std::invalid_argument);
}

TEST(Iterator, PairConservationProperty) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto ds = ingest_events(synthetic::random_events(50, 30, 2, 12, seed));
    std::multiset<std::pair<ItemIndex, ItemIndex>> expected, emitted;
    for (const auto& s : ds.store.sessions())
      for (std::size_t k = 0; k + 1 < s.length(); ++k) expected.emplace(s.items[k], s.items[k + 1]);
    const std::size_t width = 1 + seed % 9;
    SessionParallelIterator it(ds.store, width);
    while (auto b = it.next()) {
      EXPECT_LE(b->width(), width);
      for (std::size_t k = 0; k < b->width(); ++k) {
        emitted.emplace(b->inputs[k], b->targets[k]);
        const Session& s = ds.store[b->session[k]];
        EXPECT_EQ(s.items[b->position[k]], b->inputs[k]);
        EXPECT_EQ(s.items[b->position[k] + 1], b->targets[k]);
        EXPECT_EQ(b->reset_mask[k], b->position[k] == 0);
      }
    }
    EXPECT_EQ(emitted, expected);
    EXPECT_EQ(emitted.size(), ds.store.n_pairs());
  }
}
