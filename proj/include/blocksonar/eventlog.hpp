#pragma once

// Append-only observation log (CSV: ts_ms,peer,kind,hash) plus the read-side
// first-observation index. Writer and reader are split: producers append to a
// live file, analysis reopens it once closed.

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <unistd.h>

#include "blocksonar/util.hpp"

namespace blocksonar::eventlog {

constexpr const char* kCsvHeader = "ts_ms,peer,kind,hash";

enum class ObjKind { tx, block };

inline const char* kind_name(ObjKind k) { return k == ObjKind::tx ? "tx" : "block"; }

inline std::optional<ObjKind> kind_from(std::string_view s) {
  if (s == "tx") return ObjKind::tx;
  if (s == "block") return ObjKind::block;
  return std::nullopt;
}

class LogError : public std::runtime_error {
 public:
  enum Kind { IoFailure, StorageFull, BadRecord, UnknownHash };
  LogError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

struct InvEvent {
  uint64_t ts_ms = 0;
  std::string peer;
  ObjKind kind = ObjKind::tx;
  std::string hash;  // 64 lowercase hex chars

  auto sort_key() const { return std::tie(ts_ms, peer, hash); }
  bool operator==(const InvEvent&) const = default;
};

struct FirstObservation {
  std::string hash;
  ObjKind kind = ObjKind::tx;
  uint64_t first_ts_ms = 0;
  std::string first_peer;
  bool operator==(const FirstObservation&) const = default;
};

inline void validate_event(const InvEvent& e) {
  if (!is_hex_hash(e.hash)) throw LogError(LogError::BadRecord, "hash must be 64 lowercase hex");
  if (e.peer.empty()) throw LogError(LogError::BadRecord, "empty peer");
  if (e.peer.find_first_of(",\n\r") != std::string::npos)
    throw LogError(LogError::BadRecord, "peer contains a delimiter");
}

// Single-writer appender. Producers serialize through the owner's lock (see
// crawler); this class itself is not synchronized.
class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path) {
    bool fresh = true;
    if (FILE* probe = std::fopen(path.c_str(), "rb")) {
      fresh = std::fgetc(probe) == EOF;
      std::fclose(probe);
    }
    f_ = std::fopen(path.c_str(), "ab");
    if (!f_) throw LogError(LogError::IoFailure, path + ": " + std::strerror(errno));
    if (fresh) put_line(kCsvHeader);
  }
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;
  ~Writer() {
    if (f_) std::fclose(f_);
  }

  void append(const InvEvent& e) {
    validate_event(e);
    std::string line = std::to_string(e.ts_ms);
    line += ',';
    line += e.peer;
    line += ',';
    line += kind_name(e.kind);
    line += ',';
    line += e.hash;
    put_line(line.c_str());
  }

  // Durable on return: stdio buffer and page cache are both drained.
  void flush() {
    if (std::fflush(f_) != 0) throw_io("flush");
    if (fdatasync(fileno(f_)) != 0) throw_io("fdatasync");
  }

 private:
  void put_line(const char* s) {
    if (std::fputs(s, f_) < 0 || std::fputc('\n', f_) == EOF) throw_io("write");
  }
  [[noreturn]] void throw_io(const char* op) {
    int err = errno;
    auto kind = err == ENOSPC ? LogError::StorageFull : LogError::IoFailure;
    throw LogError(kind, path_ + ": " + op + ": " + std::strerror(err));
  }

  std::string path_;
  FILE* f_ = nullptr;
};

// Immutable view over a closed log. Events are sorted by (ts, peer, hash) on
// load; per-hash slices inherit that order, so the head of a slice is the
// first observation with the lexicographic-peer tie-break.
class Log {
 public:
  Log() = default;

  static Log load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LogError(LogError::IoFailure, path + ": " + std::strerror(errno));
    Log log;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1) {
        if (line != kCsvHeader)
          throw LogError(LogError::BadRecord, path + ":1: bad header: " + line);
        continue;
      }
      if (line.empty()) continue;
      log.events_.push_back(parse_line(line, path, lineno));
    }
    if (in.bad()) throw LogError(LogError::IoFailure, path + ": read failed");
    log.build_index();
    return log;
  }

  static Log from_events(std::vector<InvEvent> events) {
    Log log;
    for (const auto& e : events) validate_event(e);
    log.events_ = std::move(events);
    log.build_index();
    return log;
  }

  size_t size() const { return events_.size(); }
  const std::vector<InvEvent>& events() const { return events_; }

  std::optional<FirstObservation> first_observation(const std::string& hash) const {
    auto it = by_hash_.find(hash);
    if (it == by_hash_.end()) return std::nullopt;
    const InvEvent& e = events_[it->second.front()];
    return FirstObservation{e.hash, e.kind, e.ts_ms, e.peer};
  }

  // Earliest event of the hash restricted to one kind; a hash announced as
  // both tx and block (hostile peer) is tracked per kind.
  std::optional<FirstObservation> first_observation(const std::string& hash,
                                                    ObjKind kind) const {
    auto it = by_hash_.find(hash);
    if (it == by_hash_.end()) return std::nullopt;
    for (uint32_t idx : it->second) {
      const InvEvent& e = events_[idx];
      if (e.kind == kind) return FirstObservation{e.hash, e.kind, e.ts_ms, e.peer};
    }
    return std::nullopt;
  }

  // First observation per distinct hash having at least one event of `kind`,
  // sorted by (first_ts_ms, hash).
  std::vector<FirstObservation> first_observations(ObjKind kind) const {
    std::vector<FirstObservation> out;
    for (const auto& [hash, idxs] : by_hash_) {
      for (uint32_t idx : idxs) {
        const InvEvent& e = events_[idx];
        if (e.kind != kind) continue;
        out.push_back({e.hash, e.kind, e.ts_ms, e.peer});
        break;
      }
    }
    std::sort(out.begin(), out.end(), [](const FirstObservation& a, const FirstObservation& b) {
      return std::tie(a.first_ts_ms, a.hash) < std::tie(b.first_ts_ms, b.hash);
    });
    return out;
  }

  // Events with t0 <= ts < t1, already sorted by (ts, peer, hash).
  std::vector<InvEvent> iterate(uint64_t t0, uint64_t t1,
                                std::optional<ObjKind> filter = std::nullopt) const {
    if (t0 > t1) throw std::invalid_argument("iterate range reversed");
    auto lo = std::lower_bound(events_.begin(), events_.end(), t0,
                               [](const InvEvent& e, uint64_t t) { return e.ts_ms < t; });
    auto hi = std::lower_bound(lo, events_.end(), t1,
                               [](const InvEvent& e, uint64_t t) { return e.ts_ms < t; });
    std::vector<InvEvent> out;
    for (auto it = lo; it != hi; ++it)
      if (!filter || it->kind == *filter) out.push_back(*it);
    return out;
  }

  // Cumulative distinct announcing peers per timestamp, events with
  // ts < until_ts only. Step emitted whenever the count grows.
  std::vector<std::pair<uint64_t, size_t>> reach_count_series(const std::string& hash,
                                                              uint64_t until_ts) const {
    auto it = by_hash_.find(hash);
    if (it == by_hash_.end()) throw LogError(LogError::UnknownHash, "no events for " + hash);
    std::vector<std::pair<uint64_t, size_t>> series;
    std::set<std::string_view> seen;
    for (uint32_t idx : it->second) {
      const InvEvent& e = events_[idx];
      if (e.ts_ms >= until_ts) break;
      if (!seen.insert(e.peer).second) continue;
      if (!series.empty() && series.back().first == e.ts_ms)
        series.back().second = seen.size();
      else
        series.emplace_back(e.ts_ms, seen.size());
    }
    return series;
  }

  std::vector<FirstObservation> all_first_observations() const {
    std::vector<FirstObservation> out;
    out.reserve(by_hash_.size());
    for (const auto& [hash, idxs] : by_hash_) {
      const InvEvent& e = events_[idxs.front()];
      out.push_back({e.hash, e.kind, e.ts_ms, e.peer});
    }
    std::sort(out.begin(), out.end(), [](const FirstObservation& a, const FirstObservation& b) {
      return std::tie(a.first_ts_ms, a.hash) < std::tie(b.first_ts_ms, b.hash);
    });
    return out;
  }

 private:
  static InvEvent parse_line(const std::string& line, const std::string& path, size_t lineno) {
    auto bad = [&](const char* why) -> LogError {
      return LogError(LogError::BadRecord,
                      path + ":" + std::to_string(lineno) + ": " + why + ": " + line);
    };
    size_t c1 = line.find(',');
    size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    size_t c3 = c2 == std::string::npos ? std::string::npos : line.find(',', c2 + 1);
    if (c3 == std::string::npos || line.find(',', c3 + 1) != std::string::npos)
      throw bad("expected 4 fields");
    InvEvent e;
    const char* first = line.data();
    auto [p, ec] = std::from_chars(first, first + c1, e.ts_ms);
    if (ec != std::errc{} || p != first + c1) throw bad("bad ts_ms");
    e.peer = line.substr(c1 + 1, c2 - c1 - 1);
    auto kind = kind_from(std::string_view(line).substr(c2 + 1, c3 - c2 - 1));
    if (!kind) throw bad("bad kind");
    e.kind = *kind;
    e.hash = line.substr(c3 + 1);
    try {
      validate_event(e);
    } catch (const LogError& err) {
      throw bad(err.what());
    }
    return e;
  }

  void build_index() {
    std::sort(events_.begin(), events_.end(),
              [](const InvEvent& a, const InvEvent& b) { return a.sort_key() < b.sort_key(); });
    by_hash_.clear();
    for (uint32_t i = 0; i < events_.size(); ++i) by_hash_[events_[i].hash].push_back(i);
  }

  std::vector<InvEvent> events_;
  std::unordered_map<std::string, std::vector<uint32_t>> by_hash_;
};

}  // namespace blocksonar::eventlog
