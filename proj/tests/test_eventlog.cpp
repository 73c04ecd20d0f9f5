#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "blocksonar/eventlog.hpp"

using namespace blocksonar;
using namespace blocksonar::eventlog;

namespace {

std::string temp_path(const std::string& stem) {
  auto dir = std::filesystem::temp_directory_path() / "blocksonar_tests";
  std::filesystem::create_directories(dir);
  return (dir / (stem + "." + std::to_string(::getpid()) + ".csv")).string();
}

std::string hash_of(unsigned n) {
  char buf[65];
  std::snprintf(buf, sizeof buf, "%064x", n);
  return buf;
}

InvEvent ev(uint64_t ts, std::string peer, ObjKind k, unsigned hash_n) {
  return {ts, std::move(peer), k, hash_of(hash_n)};
}

size_t line_count(const std::string& path) {
  std::ifstream in(path);
  size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("append then iterate returns events verbatim", "[eventlog]") {
  auto path = temp_path("verbatim");
  std::filesystem::remove(path);
  {
    Writer w(path);
    w.append(ev(5, "10.0.0.1:8333", ObjKind::tx, 1));
    w.append(ev(3, "10.0.0.2:8333", ObjKind::block, 2));
    w.append(ev(5, "10.0.0.1:8333", ObjKind::tx, 1));  // duplicates are legal
    w.flush();
  }
  Log log = Log::load(path);
  REQUIRE(log.size() == 3);
  auto all = log.iterate(0, UINT64_MAX);
  REQUIRE(all.size() == 3);
  CHECK(all[0] == ev(3, "10.0.0.2:8333", ObjKind::block, 2));
  CHECK(all[1] == ev(5, "10.0.0.1:8333", ObjKind::tx, 1));
  CHECK(all[2] == ev(5, "10.0.0.1:8333", ObjKind::tx, 1));
  std::filesystem::remove(path);
}

TEST_CASE("log file round-trips as a multiset", "[eventlog]") {
  auto path = temp_path("multiset");
  std::filesystem::remove(path);
  Rng rng(0x5eed1001);
  std::vector<InvEvent> written;
  {
    Writer w(path);
    for (int i = 0; i < 5'000; ++i) {
      InvEvent e = ev(rng.uniform_u64(0, 1'000'000),
                      "10.0." + std::to_string(rng.uniform_index(4)) + ".1:8333",
                      rng.bernoulli(0.2) ? ObjKind::block : ObjKind::tx,
                      static_cast<unsigned>(rng.uniform_index(2'000)));
      w.append(e);
      written.push_back(e);
    }
    w.flush();
  }
  Log log = Log::load(path);
  auto sort_all = [](std::vector<InvEvent> v) {
    std::sort(v.begin(), v.end(),
              [](const InvEvent& a, const InvEvent& b) { return a.sort_key() < b.sort_key(); });
    return v;
  };
  CHECK(sort_all(written) == log.events());
  std::filesystem::remove(path);
}

TEST_CASE("a million appends leave a million lines plus header", "[eventlog]") {
  auto path = temp_path("million");
  std::filesystem::remove(path);
  {
    Writer w(path);
    InvEvent e = ev(0, "10.0.0.1:8333", ObjKind::tx, 7);
    for (int i = 0; i < 1'000'000; ++i) {
      e.ts_ms = static_cast<uint64_t>(i);
      w.append(e);
    }
    w.flush();
  }
  CHECK(line_count(path) == 1'000'001);
  std::filesystem::remove(path);
}

TEST_CASE("flushed events survive a crashed writer", "[eventlog]") {
  auto path = temp_path("crash");
  std::filesystem::remove(path);
  pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    // child: flush three events, buffer two more, die without cleanup
    Writer w(path);
    w.append(ev(1, "a:1", ObjKind::tx, 1));
    w.append(ev(2, "a:1", ObjKind::tx, 2));
    w.append(ev(3, "a:1", ObjKind::block, 3));
    w.flush();
    w.append(ev(4, "a:1", ObjKind::tx, 4));
    w.append(ev(5, "a:1", ObjKind::tx, 5));
    _exit(0);
  }
  int status = 0;
  REQUIRE(waitpid(pid, &status, 0) == pid);
  REQUIRE(WIFEXITED(status));

  Log log = Log::load(path);
  REQUIRE(log.size() >= 3);
  CHECK(log.first_observation(hash_of(1)).has_value());
  CHECK(log.first_observation(hash_of(2)).has_value());
  CHECK(log.first_observation(hash_of(3)).has_value());
  std::filesystem::remove(path);
}

TEST_CASE("reopening an existing log appends without a second header", "[eventlog]") {
  auto path = temp_path("reopen");
  std::filesystem::remove(path);
  {
    Writer w(path);
    w.append(ev(1, "a:1", ObjKind::tx, 1));
    w.flush();
  }
  {
    Writer w(path);
    w.append(ev(2, "a:1", ObjKind::tx, 2));
    w.flush();
  }
  CHECK(line_count(path) == 3);
  CHECK(Log::load(path).size() == 2);
  std::filesystem::remove(path);
}

TEST_CASE("writer surfaces a full disk as StorageFull", "[eventlog]") {
  if (!std::filesystem::exists("/dev/full")) SKIP("no /dev/full on this system");
  bool storage_full = false;
  try {
    Writer w("/dev/full");
    InvEvent e = ev(1, "a:1", ObjKind::tx, 1);
    for (int i = 0; i < 100'000; ++i) w.append(e);
    w.flush();
  } catch (const LogError& err) {
    storage_full = err.kind == LogError::StorageFull;
  }
  CHECK(storage_full);
}

TEST_CASE("append rejects malformed events", "[eventlog]") {
  auto path = temp_path("reject");
  std::filesystem::remove(path);
  Writer w(path);
  InvEvent bad_hash = ev(1, "a:1", ObjKind::tx, 1);
  bad_hash.hash = "XYZ";
  CHECK_THROWS_AS(w.append(bad_hash), LogError);
  InvEvent comma = ev(1, "a,b:1", ObjKind::tx, 1);
  CHECK_THROWS_AS(w.append(comma), LogError);
  InvEvent upper = ev(1, "a:1", ObjKind::tx, 1);
  upper.hash = std::string(64, 'A');
  CHECK_THROWS_AS(w.append(upper), LogError);
  std::filesystem::remove(path);
}

TEST_CASE("loader rejects malformed lines", "[eventlog]") {
  auto path = temp_path("badline");
  {
    std::ofstream out(path);
    out << kCsvHeader << "\n";
    out << "12,peer:1,tx," << std::string(64, 'a') << "\n";
    out << "13,peer:1,neither," << std::string(64, 'a') << "\n";
  }
  CHECK_THROWS_MATCHES(Log::load(path), LogError,
                       Catch::Matchers::Predicate<LogError>(
                           [](const LogError& e) { return e.kind == LogError::BadRecord; }));
  std::filesystem::remove(path);
}

TEST_CASE("first observation takes the earliest event", "[eventlog]") {
  Log log = Log::from_events({
      ev(7, "b:1", ObjKind::tx, 1),
      ev(5, "a:1", ObjKind::tx, 1),
      ev(9, "c:1", ObjKind::tx, 1),
  });
  auto fo = log.first_observation(hash_of(1));
  REQUIRE(fo.has_value());
  CHECK(fo->first_ts_ms == 5);
  CHECK(fo->first_peer == "a:1");
  CHECK(fo->kind == ObjKind::tx);
}

TEST_CASE("first observation breaks timestamp ties by peer name", "[eventlog]") {
  Log log = Log::from_events({
      ev(5, "b:1", ObjKind::block, 1),
      ev(5, "a:1", ObjKind::block, 1),
  });
  auto fo = log.first_observation(hash_of(1));
  REQUIRE(fo.has_value());
  CHECK(fo->first_ts_ms == 5);
  CHECK(fo->first_peer == "a:1");
}

TEST_CASE("first observation of an unseen hash is absent", "[eventlog]") {
  Log log = Log::from_events({ev(5, "a:1", ObjKind::tx, 1)});
  CHECK_FALSE(log.first_observation(hash_of(2)).has_value());
}

TEST_CASE("first observation lower-bounds every event of its hash", "[eventlog]") {
  Rng rng(0x5eed1002);
  std::vector<InvEvent> events;
  for (int i = 0; i < 3'000; ++i)
    events.push_back(ev(rng.uniform_u64(0, 500), "p" + std::to_string(rng.uniform_index(20)) + ":1",
                        ObjKind::tx, static_cast<unsigned>(rng.uniform_index(100))));
  Log log = Log::from_events(events);
  for (const auto& e : events) {
    auto fo = log.first_observation(e.hash);
    REQUIRE(fo.has_value());
    REQUIRE(fo->first_ts_ms <= e.ts_ms);
  }
}

TEST_CASE("iterate respects range and kind filter", "[eventlog]") {
  Log log = Log::from_events({
      ev(1, "a:1", ObjKind::tx, 1),
      ev(2, "a:1", ObjKind::block, 2),
      ev(3, "a:1", ObjKind::tx, 3),
      ev(4, "a:1", ObjKind::block, 4),
  });
  CHECK(log.iterate(0, UINT64_MAX).size() == 4);
  CHECK(log.iterate(2, 4).size() == 2);      // half-open: ts 2 and 3
  CHECK(log.iterate(5, 5).empty());
  CHECK(log.iterate(0, UINT64_MAX, ObjKind::block).size() == 2);
  CHECK_THROWS_AS(log.iterate(4, 2), std::invalid_argument);
}

TEST_CASE("iterate output is sorted by ts, peer, hash", "[eventlog]") {
  Rng rng(0x5eed1003);
  std::vector<InvEvent> events;
  for (int i = 0; i < 2'000; ++i)
    events.push_back(ev(rng.uniform_u64(0, 50), "p" + std::to_string(rng.uniform_index(9)) + ":1",
                        ObjKind::tx, static_cast<unsigned>(rng.uniform_index(40))));
  auto out = Log::from_events(events).iterate(10, 40);
  for (size_t i = 1; i < out.size(); ++i) REQUIRE(out[i - 1].sort_key() <= out[i].sort_key());
  for (const auto& e : out) {
    REQUIRE(e.ts_ms >= 10);
    REQUIRE(e.ts_ms < 40);
  }
}

TEST_CASE("reach count of a single announcer is one step", "[eventlog]") {
  Log log = Log::from_events({ev(100, "a:1", ObjKind::block, 1)});
  auto s = log.reach_count_series(hash_of(1), UINT64_MAX);
  REQUIRE(s.size() == 1);
  CHECK(s[0] == std::pair<uint64_t, size_t>{100, 1});
}

TEST_CASE("reach count merges same-timestamp announcers", "[eventlog]") {
  Log log = Log::from_events({
      ev(100, "a:1", ObjKind::block, 1),
      ev(101, "b:1", ObjKind::block, 1),
      ev(101, "c:1", ObjKind::block, 1),
  });
  auto s = log.reach_count_series(hash_of(1), UINT64_MAX);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == std::pair<uint64_t, size_t>{100, 1});
  CHECK(s[1] == std::pair<uint64_t, size_t>{101, 3});
}

TEST_CASE("reach count ignores duplicate peers and respects truncation", "[eventlog]") {
  Log log = Log::from_events({
      ev(100, "a:1", ObjKind::block, 1),
      ev(150, "a:1", ObjKind::block, 1),  // same peer again: no step
      ev(200, "b:1", ObjKind::block, 1),
  });
  auto s = log.reach_count_series(hash_of(1), 200);  // truncation excludes ts 200
  REQUIRE(s.size() == 1);
  CHECK(s[0] == std::pair<uint64_t, size_t>{100, 1});

  CHECK_THROWS_MATCHES(log.reach_count_series(hash_of(9), UINT64_MAX), LogError,
                       Catch::Matchers::Predicate<LogError>(
                           [](const LogError& e) { return e.kind == LogError::UnknownHash; }));
}

TEST_CASE("reach count series is monotone", "[eventlog]") {
  Rng rng(0x5eed1004);
  std::vector<InvEvent> events;
  for (int i = 0; i < 2'000; ++i)
    events.push_back(ev(rng.uniform_u64(0, 300),
                        "p" + std::to_string(rng.uniform_index(50)) + ":1", ObjKind::block, 1));
  auto s = Log::from_events(events).reach_count_series(hash_of(1), 250);
  REQUIRE_FALSE(s.empty());
  for (size_t i = 1; i < s.size(); ++i) {
    REQUIRE(s[i - 1].first < s[i].first);
    REQUIRE(s[i - 1].second < s[i].second);
  }
}
