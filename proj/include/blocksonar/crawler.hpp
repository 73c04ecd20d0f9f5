#pragma once

// Passive network observer: dials seeds, learns more peers via getaddr/addr,
// keeps one listening session per address and forwards every inv it hears to
// an event sink. It never requests object data and never relays anything;
// dropped sessions reconnect immediately, then back off exponentially.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "blocksonar/eventlog.hpp"
#include "blocksonar/net.hpp"
#include "blocksonar/util.hpp"
#include "blocksonar/wire.hpp"

namespace blocksonar::crawl {

class CrawlError : public std::runtime_error {
 public:
  enum Kind { NoSeeds };
  CrawlError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

enum class PeerState { NEW, CONNECTING, ESTABLISHED, FAILED, BANNED };

inline const char* state_name(PeerState s) {
  switch (s) {
    case PeerState::NEW: return "NEW";
    case PeerState::CONNECTING: return "CONNECTING";
    case PeerState::ESTABLISHED: return "ESTABLISHED";
    case PeerState::FAILED: return "FAILED";
    case PeerState::BANNED: return "BANNED";
  }
  return "?";
}

struct PeerEntry {
  std::string address;  // textual ip:port; the directory key
  PeerState state = PeerState::NEW;
  uint64_t last_attempt_ms = 0;
  uint64_t next_attempt_ms = 0;  // earliest redial, wall clock
  uint32_t consecutive_failures = 0;
  std::optional<wire::VersionInfo> advertised_version;
};

struct CrawlerConfig {
  std::vector<std::string> seeds;  // "host:port"
  size_t max_connections = 1000;
  int handshake_timeout_ms = 10'000;
  uint64_t backoff_base_ms = 1000;
  uint64_t backoff_cap_ms = 300'000;
  uint64_t getaddr_interval_ms = 600'000;
  uint32_t ban_after_failures = 20;  // bounds churn on dead addresses
  std::string self_address;          // never inserted from addr messages
  uint32_t magic = wire::kSimMagic;
  wire::VersionInfo version;
};

using EventSink = std::function<void(const eventlog::InvEvent&)>;

namespace detail {

inline uint64_t wall_ms() {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::system_clock::now().time_since_epoch())
                                   .count());
}

}  // namespace detail

// Outbound-only observer. Every session owns its socket; the directory is the
// shared structure, guarded by one mutex. There is no inbound listener, so the
// one-connection-per-address rule is enforced by the dialer alone.
class Crawler {
 public:
  Crawler(CrawlerConfig cfg, EventSink sink) : cfg_(std::move(cfg)), sink_(std::move(sink)) {
    if (cfg_.seeds.empty()) throw CrawlError(CrawlError::NoSeeds, "no seed addresses");
    for (const auto& s : cfg_.seeds) directory_.emplace(s, PeerEntry{s});
    supervisor_ = std::thread([this] { supervise(); });
  }
  Crawler(const Crawler&) = delete;
  Crawler& operator=(const Crawler&) = delete;
  ~Crawler() { stop(); }

  void stop() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (stopping_) return;
      stopping_ = true;
      for (auto& [addr, ch] : live_channels_) ch->shutdown();
    }
    wake_.notify_all();
    if (supervisor_.joinable()) supervisor_.join();
    for (;;) {
      std::list<Session> drain;
      {
        std::lock_guard<std::mutex> lk(mu_);
        drain.swap(sessions_);
      }
      if (drain.empty()) break;
      for (auto& s : drain) s.th.join();
    }
  }

  // Discovered addresses enter as NEW; known ones and our own are ignored.
  size_t on_addr(const std::string& source,
                 const std::vector<wire::TimestampedAddress>& entries) {
    (void)source;
    std::lock_guard<std::mutex> lk(mu_);
    size_t added = 0;
    for (const auto& e : entries) {
      std::string addr = e.addr.to_string();
      if (addr == cfg_.self_address) continue;
      if (directory_.emplace(addr, PeerEntry{addr}).second) ++added;
    }
    return added;
  }

  // The session vanished; redial now, and only back off on further failures.
  void on_disconnect(const std::string& address) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = directory_.find(address);
    if (it == directory_.end()) return;
    it->second.state = PeerState::FAILED;
    it->second.next_attempt_ms = 0;
    wake_.notify_all();
  }

  // One event per inv vector, all stamped with the receipt time.
  std::vector<eventlog::InvEvent> on_inv(const std::string& source,
                                         const std::vector<wire::InvVector>& vectors,
                                         uint64_t now_ms) {
    std::vector<eventlog::InvEvent> events;
    events.reserve(vectors.size());
    for (const auto& v : vectors) {
      if (v.object_kind != wire::kInvTx && v.object_kind != wire::kInvBlock)
        continue;  // unknown inventory kinds are skipped, never fatal
      events.push_back({now_ms, source,
                        v.object_kind == wire::kInvTx ? eventlog::ObjKind::tx
                                                      : eventlog::ObjKind::block,
                        v.hash_hex()});
    }
    std::lock_guard<std::mutex> lk(sink_mu_);
    for (const auto& e : events) sink_(e);
    return events;
  }

  std::map<std::string, PeerEntry> directory() const {
    std::lock_guard<std::mutex> lk(mu_);
    return directory_;
  }

  std::map<PeerState, size_t> state_counts() const {
    std::lock_guard<std::mutex> lk(mu_);
    std::map<PeerState, size_t> counts;
    for (const auto& [addr, e] : directory_) ++counts[e.state];
    return counts;
  }

  size_t established_count() const {
    std::lock_guard<std::mutex> lk(mu_);
    size_t n = 0;
    for (const auto& [addr, e] : directory_)
      if (e.state == PeerState::ESTABLISHED) ++n;
    return n;
  }

 private:
  struct Session {
    std::thread th;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void supervise() {
    std::unique_lock<std::mutex> lk(mu_);
    while (!stopping_) {
      for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (it->done->load()) {
          it->th.join();
          it = sessions_.erase(it);
        } else {
          ++it;
        }
      }
      uint64_t now = detail::wall_ms();
      for (auto& [addr, entry] : directory_) {
        if (active_ >= cfg_.max_connections) break;
        bool due = entry.state == PeerState::NEW ||
                   (entry.state == PeerState::FAILED && entry.next_attempt_ms <= now);
        if (!due) continue;
        entry.state = PeerState::CONNECTING;
        entry.last_attempt_ms = now;
        ++active_;
        auto done = std::make_shared<std::atomic<bool>>(false);
        std::string target = addr;
        sessions_.push_back(
            {std::thread([this, target, done] {
               session(target);
               done->store(true);
             }),
             done});
      }
      wake_.wait_for(lk, std::chrono::milliseconds(20));
    }
  }

  void record_failure(const std::string& address) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = directory_.find(address);
    if (it == directory_.end()) return;
    PeerEntry& e = it->second;
    ++e.consecutive_failures;
    if (e.consecutive_failures >= cfg_.ban_after_failures) {
      e.state = PeerState::BANNED;
      return;
    }
    e.state = PeerState::FAILED;
    uint32_t shift = std::min(e.consecutive_failures - 1, 30u);
    uint64_t delay = std::min(cfg_.backoff_cap_ms, cfg_.backoff_base_ms << shift);
    e.next_attempt_ms = detail::wall_ms() + delay;
  }

  void session(const std::string& address) {
    std::unique_ptr<net::TcpConn> conn;
    try {
      auto colon = address.rfind(':');
      if (colon == std::string::npos || colon + 1 == address.size())
        throw wire::ChannelError(wire::ChannelError::Io, "bad address " + address);
      std::string host = address.substr(0, colon);
      int port = std::stoi(address.substr(colon + 1));
      conn = net::TcpConn::connect(host, static_cast<uint16_t>(port), cfg_.handshake_timeout_ms);
      auto peer_version = wire::handshake(*conn, cfg_.version, cfg_.magic,
                                          cfg_.handshake_timeout_ms);
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (stopping_) {
          --active_;
          return;
        }
        auto it = directory_.find(address);
        if (it != directory_.end()) {
          it->second.state = PeerState::ESTABLISHED;
          it->second.consecutive_failures = 0;
          it->second.advertised_version = peer_version;
        }
        live_channels_[address] = conn.get();
      }
    } catch (const std::exception&) {
      record_failure(address);
      --active_;
      return;
    }

    bool clean_stop = false;
    try {
      wire::send_message(*conn, cfg_.magic, "getaddr", {});
      uint64_t last_getaddr = steady_ms();
      for (;;) {
        if (stopping_.load(std::memory_order_relaxed)) {
          clean_stop = true;
          break;
        }
        wire::DecodedMessage m;
        try {
          m = wire::read_message(*conn, cfg_.magic, 200);
        } catch (const wire::ChannelError& e) {
          if (e.kind != wire::ChannelError::Timeout) break;
          if (steady_ms() - last_getaddr >= cfg_.getaddr_interval_ms) {
            wire::send_message(*conn, cfg_.magic, "getaddr", {});
            last_getaddr = steady_ms();
          }
          continue;
        } catch (const wire::WireError&) {
          break;  // framing gone: truncated stream or corrupt header
        }
        try {
          if (m.command == "inv") {
            on_inv(address, wire::decode_inv(m.payload), detail::wall_ms());
          } else if (m.command == "addr") {
            on_addr(address, wire::decode_addr(m.payload));
          } else if (m.command == "ping") {
            wire::send_message(*conn, cfg_.magic, "pong", m.payload);
          }
          // every other command is tolerated and ignored
        } catch (const wire::WireError&) {
          // malformed payload from a heterogeneous client: skip the message
        }
      }
    } catch (const std::exception&) {
      // write failure or similar: treat as a disconnect
    }

    {
      std::lock_guard<std::mutex> lk(mu_);
      live_channels_.erase(address);
      clean_stop = clean_stop || stopping_;
    }
    if (!clean_stop) on_disconnect(address);
    --active_;
  }

  CrawlerConfig cfg_;
  EventSink sink_;
  mutable std::mutex mu_;
  std::mutex sink_mu_;
  std::condition_variable wake_;
  std::map<std::string, PeerEntry> directory_;
  std::map<std::string, wire::Channel*> live_channels_;
  std::list<Session> sessions_;
  std::atomic<size_t> active_{0};
  std::atomic<bool> stopping_{false};
  std::thread supervisor_;
};

// Validates and starts a crawler; the handle stops itself on destruction.
inline std::unique_ptr<Crawler> bootstrap(CrawlerConfig cfg, EventSink sink) {
  return std::make_unique<Crawler>(std::move(cfg), std::move(sink));
}

}  // namespace blocksonar::crawl
