#pragma once

// Click-stream ingestion, item vocabulary, time-based train/test split and
// the session-parallel mini-batch iterator.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sessrnn {

using ItemIndex = std::size_t;

inline constexpr std::int64_t kMillisPerDay = 86'400'000;

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Event {
  std::string session_id;
  std::string item_id;
  std::int64_t timestamp = 0;  // milliseconds since epoch
};

class ItemVocab {
 public:
  /// Returns the index of `item`, adding it if new.
  ItemIndex add(const std::string& item) {
    auto [it, inserted] = index_.try_emplace(item, items_.size());
    if (inserted) {
      items_.push_back(item);
      popularity_.push_back(0);
    }
    return it->second;
  }

  std::optional<ItemIndex> find(const std::string& item) const {
    auto it = index_.find(item);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  void count(ItemIndex i, std::uint64_t n = 1) { popularity_.at(i) += n; }

  std::size_t size() const { return items_.size(); }
  const std::string& item(ItemIndex i) const { return items_.at(i); }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<std::uint64_t>& popularity() const { return popularity_; }
  std::uint64_t popularity(ItemIndex i) const { return popularity_.at(i); }

  std::uint64_t total_events() const {
    std::uint64_t s = 0;
    for (auto p : popularity_) s += p;
    return s;
  }

  /// Rebuilds a vocabulary from persisted ids and counts.
  static ItemVocab from_parts(std::vector<std::string> items, std::vector<std::uint64_t> popularity) {
    if (items.size() != popularity.size())
      throw std::invalid_argument("ItemVocab: ids and popularity counts differ in length");
    ItemVocab v;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (v.add(items[i]) != i) throw std::invalid_argument("ItemVocab: duplicate item id " + items[i]);
    }
    v.popularity_ = std::move(popularity);
    return v;
  }

  friend bool operator==(const ItemVocab& a, const ItemVocab& b) {
    return a.items_ == b.items_ && a.popularity_ == b.popularity_;
  }

 private:
  std::unordered_map<std::string, ItemIndex> index_;
  std::vector<std::string> items_;
  std::vector<std::uint64_t> popularity_;
};

struct Session {
  std::string id;
  std::vector<ItemIndex> items;
  std::vector<std::int64_t> times;

  std::size_t length() const { return items.size(); }
  std::int64_t start_time() const { return times.empty() ? 0 : times.front(); }
};

/// Sessions in canonical order: ascending start time, ties by id.
class SessionStore {
 public:
  SessionStore() = default;
  explicit SessionStore(std::vector<Session> sessions) : sessions_(std::move(sessions)) {
    std::stable_sort(sessions_.begin(), sessions_.end(), [](const Session& a, const Session& b) {
      if (a.start_time() != b.start_time()) return a.start_time() < b.start_time();
      return a.id < b.id;
    });
  }

  const std::vector<Session>& sessions() const { return sessions_; }
  std::size_t size() const { return sessions_.size(); }
  bool empty() const { return sessions_.empty(); }
  const Session& operator[](std::size_t i) const { return sessions_[i]; }

  std::size_t n_events() const {
    std::size_t n = 0;
    for (const auto& s : sessions_) n += s.length();
    return n;
  }

  /// Number of (input, target) pairs, i.e. evaluation cases.
  std::size_t n_pairs() const {
    std::size_t n = 0;
    for (const auto& s : sessions_) n += s.length() > 0 ? s.length() - 1 : 0;
    return n;
  }

  std::int64_t min_time() const {
    std::int64_t t = std::numeric_limits<std::int64_t>::max();
    for (const auto& s : sessions_)
      for (auto x : s.times) t = std::min(t, x);
    return t;
  }
  std::int64_t max_time() const {
    std::int64_t t = std::numeric_limits<std::int64_t>::min();
    for (const auto& s : sessions_)
      for (auto x : s.times) t = std::max(t, x);
    return t;
  }

 private:
  std::vector<Session> sessions_;
};

struct Dataset {
  SessionStore store;
  ItemVocab vocab;
};

struct IngestOptions {
  std::size_t max_session_length = 200;  // longer sessions are treated as bots
  bool iso_timestamps = false;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

}  // namespace detail

/// Parses "YYYY-MM-DDTHH:MM:SS[.fff][Z|+HH:MM|-HH:MM]" into epoch milliseconds.
inline std::optional<std::int64_t> parse_iso8601(std::string_view text) {
  std::string s(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0, consumed = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2d%*1[T ]%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &sec,
                  &consumed) != 6)
    return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  std::int64_t ms = 0;
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits < 3) ms = ms * 10 + (s[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) return std::nullopt;
    for (int k = digits; k < 3; ++k) ms *= 10;
  }
  std::int64_t offset_min = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      // UTC
    } else if ((s[pos] == '+' || s[pos] == '-') && s.size() - pos == 6 && s[pos + 3] == ':') {
      int oh = 0, om = 0;
      if (std::sscanf(s.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2) return std::nullopt;
      offset_min = (oh * 60 + om) * (s[pos] == '+' ? 1 : -1);
    } else {
      return std::nullopt;
    }
  }
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return (static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + sec - offset_min * 60) * 1000 +
         ms;
}

/// Reads `SessionId,ItemId,Time` CSV (header required, columns in any order).
inline std::vector<Event> read_events_csv(std::istream& in, bool iso_timestamps = false) {
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  int col_session = -1, col_item = -1, col_time = -1;
  std::size_t n_cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = detail::trim(line);
    if (line_no == 1 && view.size() >= 3 && static_cast<unsigned char>(view[0]) == 0xEF &&
        static_cast<unsigned char>(view[1]) == 0xBB && static_cast<unsigned char>(view[2]) == 0xBF)
      view.remove_prefix(3);
    if (view.empty()) continue;
    auto fields = detail::split_csv_line(view);
    if (col_session < 0) {
      n_cols = fields.size();
      for (std::size_t i = 0; i < fields.size(); ++i) {
        auto f = detail::trim(fields[i]);
        if (f == "SessionId") col_session = static_cast<int>(i);
        else if (f == "ItemId") col_item = static_cast<int>(i);
        else if (f == "Time") col_time = static_cast<int>(i);
      }
      if (col_session < 0 || col_item < 0 || col_time < 0)
        throw ParseError(line_no, "header must name SessionId, ItemId and Time columns");
      continue;
    }
    if (fields.size() != n_cols)
      throw ParseError(line_no, "expected " + std::to_string(n_cols) + " fields, got " +
                                    std::to_string(fields.size()));
    Event e;
    e.session_id = std::string(detail::trim(fields[col_session]));
    e.item_id = std::string(detail::trim(fields[col_item]));
    const auto time_field = detail::trim(fields[col_time]);
    if (e.session_id.empty() || e.item_id.empty()) throw ParseError(line_no, "empty session or item id");
    if (iso_timestamps) {
      auto t = parse_iso8601(time_field);
      if (!t) throw ParseError(line_no, "bad ISO-8601 timestamp '" + std::string(time_field) + "'");
      e.timestamp = *t;
    } else {
      auto [ptr, ec] = std::from_chars(time_field.data(), time_field.data() + time_field.size(), e.timestamp);
      if (ec != std::errc{} || ptr != time_field.data() + time_field.size())
        throw ParseError(line_no, "bad timestamp '" + std::string(time_field) + "'");
    }
    if (e.timestamp < 0) throw ParseError(line_no, "negative timestamp");
    events.push_back(std::move(e));
  }
  return events;
}

/// Groups events into time-ordered sessions, drops sessions of length 1 and
/// sessions longer than `max_session_length`, then indexes items in order of
/// first appearance over the kept sessions.
inline Dataset ingest_events(const std::vector<Event>& events, const IngestOptions& opts = {}) {
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::vector<const Event*>> grouped;
  for (const auto& e : events) {
    auto [it, inserted] = slot.try_emplace(e.session_id, grouped.size());
    if (inserted) grouped.emplace_back();
    grouped[it->second].push_back(&e);
  }

  struct Pending {
    std::string id;
    std::vector<const Event*> events;
  };
  std::vector<Pending> kept;
  for (auto& g : grouped) {
    if (g.size() < 2 || g.size() > opts.max_session_length) continue;
    std::stable_sort(g.begin(), g.end(),
                     [](const Event* a, const Event* b) { return a->timestamp < b->timestamp; });
    kept.push_back({g.front()->session_id, std::move(g)});
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Pending& a, const Pending& b) {
    if (a.events.front()->timestamp != b.events.front()->timestamp)
      return a.events.front()->timestamp < b.events.front()->timestamp;
    return a.id < b.id;
  });

  Dataset ds;
  std::vector<Session> sessions;
  sessions.reserve(kept.size());
  for (const auto& p : kept) {
    Session s;
    s.id = p.id;
    for (const Event* e : p.events) {
      const ItemIndex idx = ds.vocab.add(e->item_id);
      ds.vocab.count(idx);
      s.items.push_back(idx);
      s.times.push_back(e->timestamp);
    }
    sessions.push_back(std::move(s));
  }
  ds.store = SessionStore(std::move(sessions));
  return ds;
}

inline Dataset ingest_csv(std::istream& in, const IngestOptions& opts = {}) {
  return ingest_events(read_events_csv(in, opts.iso_timestamps), opts);
}

/// Expresses `store` (indexed by `from`) in the indices of `to`. Events whose
/// item is unknown to `to` are removed, then sessions shorter than 2 dropped.
inline SessionStore remap_sessions(const SessionStore& store, const ItemVocab& from, const ItemVocab& to,
                                   std::size_t* dropped_events = nullptr) {
  std::vector<Session> out;
  std::size_t dropped = 0;
  for (const auto& s : store.sessions()) {
    Session r;
    r.id = s.id;
    for (std::size_t k = 0; k < s.length(); ++k) {
      auto idx = to.find(from.item(s.items[k]));
      if (!idx) {
        ++dropped;
        continue;
      }
      r.items.push_back(*idx);
      r.times.push_back(s.times[k]);
    }
    if (r.length() >= 2) out.push_back(std::move(r));
  }
  if (dropped_events) *dropped_events = dropped;
  return SessionStore(std::move(out));
}

struct TrainTestSplit {
  SessionStore train;
  ItemVocab train_vocab;
  SessionStore test;  // indexed by train_vocab
};

/// Whole-session split on start time: sessions starting before `boundary` go
/// to train. Test events on items unseen in train are removed, and test
/// sessions left shorter than 2 are dropped.
inline TrainTestSplit split_train_test(const SessionStore& store, const ItemVocab& vocab,
                                       std::int64_t boundary) {
  TrainTestSplit split;
  std::vector<Session> train, test_raw;
  for (const auto& s : store.sessions()) (s.start_time() < boundary ? train : test_raw).push_back(s);

  for (auto& s : train) {
    for (auto& idx : s.items) {
      const ItemIndex mapped = split.train_vocab.add(vocab.item(idx));
      split.train_vocab.count(mapped);
      idx = mapped;
    }
  }
  split.train = SessionStore(std::move(train));
  split.test = remap_sessions(SessionStore(std::move(test_raw)), vocab, split.train_vocab);
  return split;
}

/// Boundary such that the last `days` calendar days (UTC) of the store become
/// the test period.
inline std::int64_t last_days_boundary(const SessionStore& store, std::int64_t days) {
  if (store.empty()) return 0;
  const std::int64_t last_day_start = (store.max_time() / kMillisPerDay) * kMillisPerDay;
  return last_day_start - (days - 1) * kMillisPerDay;
}

/// Canonical serialization: header, then sessions in store order with their
/// events in time order.
inline void write_csv(std::ostream& out, const SessionStore& store, const ItemVocab& vocab) {
  out << "SessionId,ItemId,Time\n";
  for (const auto& s : store.sessions())
    for (std::size_t k = 0; k < s.length(); ++k)
      out << s.id << ',' << vocab.item(s.items[k]) << ',' << s.times[k] << '\n';
}

inline constexpr std::size_t kNoLane = std::numeric_limits<std::size_t>::max();

struct MiniBatch {
  std::vector<ItemIndex> inputs;
  std::vector<ItemIndex> targets;
  std::vector<bool> reset_mask;
  // Lane of the previous batch whose hidden state this lane continues, or
  // kNoLane for a freshly started session.
  std::vector<std::size_t> source_lane;
  std::vector<std::size_t> session;   // index into the store
  std::vector<std::size_t> position;  // position of inputs[k] within its session

  std::size_t width() const { return inputs.size(); }
};

/// Session-parallel mini-batches. Each lane advances one event per batch;
/// a finished session is replaced in place by the next unconsumed one, and
/// once no sessions remain the finished lanes are dropped and the batch
/// shrinks (surviving lanes keep their relative order).
class SessionParallelIterator {
 public:
  SessionParallelIterator(const SessionStore& store, std::size_t batch_width)
      : store_(&store), width_(batch_width) {
    if (batch_width < 1) throw std::invalid_argument("batch width must be at least 1");
  }

  std::optional<MiniBatch> next() {
    std::vector<Lane> lanes;
    std::vector<std::size_t> sources;
    if (!started_) {
      started_ = true;
      while (lanes.size() < width_) {
        auto s = take_session();
        if (!s) break;
        lanes.push_back({*s, 0});
        sources.push_back(kNoLane);
      }
    } else {
      for (std::size_t k = 0; k < lanes_.size(); ++k) {
        Lane lane = lanes_[k];
        ++lane.pos;
        if (lane.pos + 1 < (*store_)[lane.session].length()) {
          lanes.push_back(lane);
          sources.push_back(k);
        } else if (auto s = take_session()) {
          lanes.push_back({*s, 0});
          sources.push_back(kNoLane);
        }
      }
    }
    lanes_ = std::move(lanes);
    if (lanes_.empty()) return std::nullopt;

    MiniBatch b;
    for (std::size_t k = 0; k < lanes_.size(); ++k) {
      const Session& s = (*store_)[lanes_[k].session];
      b.inputs.push_back(s.items[lanes_[k].pos]);
      b.targets.push_back(s.items[lanes_[k].pos + 1]);
      b.reset_mask.push_back(sources[k] == kNoLane);
      b.source_lane.push_back(sources[k]);
      b.session.push_back(lanes_[k].session);
      b.position.push_back(lanes_[k].pos);
    }
    return b;
  }

 private:
  struct Lane {
    std::size_t session;
    std::size_t pos;
  };

  std::optional<std::size_t> take_session() {
    while (next_session_ < store_->size()) {
      const std::size_t s = next_session_++;
      if ((*store_)[s].length() >= 2) return s;
    }
    return std::nullopt;
  }

  const SessionStore* store_;
  std::size_t width_;
  std::size_t next_session_ = 0;
  bool started_ = false;
  std::vector<Lane> lanes_;
};

}  // namespace sessrnn
