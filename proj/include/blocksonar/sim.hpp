#pragma once

// Deterministic discrete-event simulator of a Bitcoin-like gossip network:
// peers on a random topology flood transactions and blocks hop by hop, miners
// hold mempools and apply an inclusion policy at exponentially spaced block
// events, and a monitor vantage connected to every peer records inv arrivals.
// Outputs are the ground-truth ledger, the monitor event log and a full audit
// of every scheduled event. In-process runs are bitwise deterministic under
// one seed; loopback mode replays the monitor schedule over real sockets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <queue>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "blocksonar/chainview.hpp"
#include "blocksonar/eventlog.hpp"
#include "blocksonar/net.hpp"
#include "blocksonar/util.hpp"
#include "blocksonar/wire.hpp"

namespace blocksonar::sim {

class SimError : public std::runtime_error {
 public:
  enum Kind { ConfigInvalid, DisconnectedAfterRetries, Io };
  SimError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

struct MinerPolicy {
  enum Kind { IncludeAll, ValueThreshold, SkipProb };
  Kind kind = IncludeAll;
  uint64_t value_threshold_sats = 0;  // ValueThreshold: include iff value >= this
  double skip_prob = 0;               // SkipProb: per-block skip chance per tx
  uint64_t skip_value_cutoff_sats = UINT64_MAX;  // SkipProb applies below this value
  size_t max_block_txs = 100'000;
};

struct SimConfig {
  uint64_t rng_seed = 1;
  size_t peer_count = 50;
  std::string topology = "random-regular";
  size_t degree = 4;       // random-regular
  double edge_prob = 0.1;  // erdos-renyi
  std::string latency_model = "constant";
  double latency_ms = 100;      // constant
  double latency_min_ms = 50;   // uniform
  double latency_max_ms = 150;  // uniform
  double latency_mean_ms = 100; // exponential
  double block_interval_mean_ms = 2000;
  std::string block_interval_model = "exponential";  // or constant, for oracle tests
  double tx_rate_per_s = 20;
  uint64_t value_min_sats = 1000;
  uint64_t value_max_sats = 100'000'000;
  uint64_t fee_min_sats = 0;
  uint64_t fee_max_sats = 10'000;
  MinerPolicy policy;
  size_t miner_count = 5;  // peers [0, miner_count) mine
  uint64_t duration_ms = 60'000;
  std::string monitor_mode = "in-process";
  double fork_prob = 0;  // chance a valid block gets a same-parent rival
  uint64_t fork_race_window_ms = 0;
  double invalid_block_prob = 0;
  double invalid_tx_prob = 0;
  double locktime_tx_prob = 0;
  double tx_delayed_announce_prob = 0;  // tx sits unannounced at its origin
  uint64_t tx_delayed_announce_ms = 5000;

  void validate() const {
    auto bad = [](const std::string& what) {
      throw SimError(SimError::ConfigInvalid, what);
    };
    if (peer_count < 2) bad("peer_count must be at least 2");
    if (topology == "random-regular") {
      if (degree < 1 || degree >= peer_count) bad("degree must be in [1, peer_count)");
      if (degree * peer_count % 2 != 0) bad("degree * peer_count must be even");
    } else if (topology == "erdos-renyi") {
      if (!(edge_prob > 0) || edge_prob > 1) bad("edge_prob must be in (0, 1]");
    } else {
      bad("unknown topology: " + topology);
    }
    if (latency_model == "constant") {
      if (latency_ms < 0) bad("latency_ms must be nonnegative");
    } else if (latency_model == "uniform") {
      if (latency_min_ms < 0 || latency_max_ms < latency_min_ms)
        bad("latency bounds must satisfy 0 <= min <= max");
    } else if (latency_model == "exponential") {
      if (!(latency_mean_ms > 0)) bad("latency_mean_ms must be positive");
    } else {
      bad("unknown latency_model: " + latency_model);
    }
    if (!(block_interval_mean_ms > 0)) bad("block_interval_mean_ms must be positive");
    if (block_interval_model != "exponential" && block_interval_model != "constant")
      bad("unknown block_interval_model: " + block_interval_model);
    if (tx_rate_per_s < 0) bad("tx_rate_per_s must be nonnegative");
    if (value_min_sats < 1 || value_max_sats < value_min_sats)
      bad("value bounds must satisfy 1 <= min <= max");
    if (fee_max_sats < fee_min_sats) bad("fee bounds must satisfy min <= max");
    if (policy.skip_prob < 0 || policy.skip_prob > 1) bad("skip_prob must be in [0, 1]");
    if (policy.max_block_txs < 1) bad("max_block_txs must be positive");
    if (miner_count < 1 || miner_count > peer_count)
      bad("miner_count must be in [1, peer_count]");
    if (duration_ms == 0) bad("duration_ms must be positive");
    if (monitor_mode != "in-process" && monitor_mode != "loopback-sockets")
      bad("unknown monitor_mode: " + monitor_mode);
    for (double p : {fork_prob, invalid_block_prob, invalid_tx_prob, locktime_tx_prob,
                     tx_delayed_announce_prob})
      if (p < 0 || p > 1) bad("probabilities must be in [0, 1]");
    if (fork_prob > 0 && (miner_count < 2 || fork_race_window_ms < 1))
      bad("forks need at least 2 miners and a positive race window");
  }

  static SimConfig parse(std::istream& in) {
    SimConfig c;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash_pos = line.find('#');
      if (hash_pos != std::string::npos) line.erase(hash_pos);
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw SimError(SimError::ConfigInvalid,
                       "line " + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
      try {
        if (!apply(c, key, val))
          throw SimError(SimError::ConfigInvalid,
                         "line " + std::to_string(lineno) + ": unknown key " + key);
      } catch (const std::invalid_argument&) {
        throw SimError(SimError::ConfigInvalid,
                       "line " + std::to_string(lineno) + ": bad value for " + key);
      } catch (const std::out_of_range&) {
        throw SimError(SimError::ConfigInvalid,
                       "line " + std::to_string(lineno) + ": bad value for " + key);
      }
    }
    c.validate();
    return c;
  }

  static SimConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SimError(SimError::Io, "cannot open " + path);
    return parse(in);
  }

 private:
  static bool apply(SimConfig& c, const std::string& key, const std::string& val) {
    auto u64 = [&] { return std::stoull(val); };
    auto f64 = [&] { return std::stod(val); };
    if (key == "rng_seed") c.rng_seed = u64();
    else if (key == "peer_count") c.peer_count = u64();
    else if (key == "topology") c.topology = val;
    else if (key == "degree") c.degree = u64();
    else if (key == "edge_prob") c.edge_prob = f64();
    else if (key == "latency_model") c.latency_model = val;
    else if (key == "latency_ms") c.latency_ms = f64();
    else if (key == "latency_min_ms") c.latency_min_ms = f64();
    else if (key == "latency_max_ms") c.latency_max_ms = f64();
    else if (key == "latency_mean_ms") c.latency_mean_ms = f64();
    else if (key == "block_interval_mean_ms") c.block_interval_mean_ms = f64();
    else if (key == "block_interval_model") c.block_interval_model = val;
    else if (key == "tx_rate_per_s") c.tx_rate_per_s = f64();
    else if (key == "value_min_sats") c.value_min_sats = u64();
    else if (key == "value_max_sats") c.value_max_sats = u64();
    else if (key == "fee_min_sats") c.fee_min_sats = u64();
    else if (key == "fee_max_sats") c.fee_max_sats = u64();
    else if (key == "miner_policy") {
      if (val == "include-all") c.policy.kind = MinerPolicy::IncludeAll;
      else if (val == "value-threshold") c.policy.kind = MinerPolicy::ValueThreshold;
      else if (val == "skip-prob") c.policy.kind = MinerPolicy::SkipProb;
      else throw SimError(SimError::ConfigInvalid, "unknown miner_policy: " + val);
    }
    else if (key == "value_threshold_sats") c.policy.value_threshold_sats = u64();
    else if (key == "skip_prob") c.policy.skip_prob = f64();
    else if (key == "skip_value_cutoff_sats") c.policy.skip_value_cutoff_sats = u64();
    else if (key == "max_block_txs") c.policy.max_block_txs = u64();
    else if (key == "miner_count") c.miner_count = u64();
    else if (key == "duration_ms") c.duration_ms = u64();
    else if (key == "monitor_mode") c.monitor_mode = val;
    else if (key == "fork_prob") c.fork_prob = f64();
    else if (key == "fork_race_window_ms") c.fork_race_window_ms = u64();
    else if (key == "invalid_block_prob") c.invalid_block_prob = f64();
    else if (key == "invalid_tx_prob") c.invalid_tx_prob = f64();
    else if (key == "locktime_tx_prob") c.locktime_tx_prob = f64();
    else if (key == "tx_delayed_announce_prob") c.tx_delayed_announce_prob = f64();
    else if (key == "tx_delayed_announce_ms") c.tx_delayed_announce_ms = u64();
    else return false;
    return true;
  }
};

// ---- topology ----------------------------------------------------------------

struct Topology {
  size_t n = 0;
  std::vector<std::vector<size_t>> adj;
  size_t edge_count = 0;
};

namespace detail {

inline bool connected(const Topology& t) {
  if (t.n == 0) return false;
  std::vector<char> seen(t.n, 0);
  std::vector<size_t> stack{0};
  seen[0] = 1;
  size_t reached = 1;
  while (!stack.empty()) {
    size_t v = stack.back();
    stack.pop_back();
    for (size_t w : t.adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++reached;
        stack.push_back(w);
      }
  }
  return reached == t.n;
}

}  // namespace detail

// Connected undirected graph, deterministic for a given rng state. Regenerates
// on self-loops, duplicate edges or disconnection, up to a bounded retry count.
inline Topology build_topology(const SimConfig& cfg, Rng& rng) {
  constexpr int kRetries = 200;
  size_t n = cfg.peer_count;
  for (int attempt = 0; attempt < kRetries; ++attempt) {
    Topology t;
    t.n = n;
    t.adj.assign(n, {});
    std::set<std::pair<size_t, size_t>> edges;
    bool ok = true;
    if (cfg.topology == "random-regular") {
      // Stub matching: d copies of each node, shuffled and paired.
      std::vector<size_t> stubs;
      stubs.reserve(n * cfg.degree);
      for (size_t v = 0; v < n; ++v)
        for (size_t k = 0; k < cfg.degree; ++k) stubs.push_back(v);
      for (size_t i = stubs.size(); i > 1; --i)
        std::swap(stubs[i - 1], stubs[rng.uniform_index(i)]);
      for (size_t i = 0; ok && i < stubs.size(); i += 2) {
        size_t a = stubs[i], b = stubs[i + 1];
        if (a == b || !edges.emplace(std::min(a, b), std::max(a, b)).second) ok = false;
      }
    } else {
      for (size_t a = 0; a < n; ++a)
        for (size_t b = a + 1; b < n; ++b)
          if (rng.bernoulli(cfg.edge_prob)) edges.emplace(a, b);
    }
    if (!ok) continue;
    for (const auto& [a, b] : edges) {
      t.adj[a].push_back(b);
      t.adj[b].push_back(a);
    }
    t.edge_count = edges.size();
    if (detail::connected(t)) return t;
  }
  throw SimError(SimError::DisconnectedAfterRetries,
                 "no connected topology after 200 attempts");
}

inline Topology build_topology(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.rng_seed);
  return build_topology(cfg, rng);
}

// ---- run ---------------------------------------------------------------------

struct AuditEntry {
  uint64_t ts_ms = 0;
  std::string type;  // tx_created, block_mined, deliver, monitor_inv, monitor_sent
  std::string peer;
  std::string kind;  // tx or block
  std::string hash;
};

enum class TxFate { Included, Mempool, Skipped };

struct RunResult {
  Topology topo;
  std::vector<std::string> peer_names;
  std::vector<chain::BlockRecord> blocks;   // mined order, genesis first
  std::vector<chain::TxRecord> standalone;  // valid txs in no block record
  std::vector<eventlog::InvEvent> events;   // monitor vantage
  std::vector<AuditEntry> audit;
  std::map<std::string, TxFate> fates;  // every generated valid tx
  uint64_t generated_valid = 0;
  uint64_t generated_invalid = 0;
  uint64_t included = 0;
  uint64_t in_mempool = 0;
  uint64_t policy_skipped = 0;
};

inline std::string peer_name(size_t i) {
  return "10.0." + std::to_string(i >> 8) + "." + std::to_string(i & 255) + ":8333";
}

namespace detail {

inline std::string object_hash(const char* tag, uint64_t seed, uint64_t n) {
  std::string s = std::string(tag) + ":" + std::to_string(seed) + ":" + std::to_string(n);
  return to_hex(wire::dsha256(bytes(s.begin(), s.end())));
}

struct Engine {
  const SimConfig& cfg;
  Rng rng;
  RunResult out;

  struct TxInfo {
    std::string txid;
    uint64_t value = 0, fee = 0;
    bool locktime = false;
    bool valid = false;
    bool in_block_record = false;
  };
  struct BlkInfo {
    std::string hash;
    int32_t parent = -1;
    uint64_t height = 0;
    uint64_t time_ms = 0;
    bool pow_valid = true;
    bool main_chain = false;
    std::vector<uint32_t> txs;
  };
  struct Peer {
    std::vector<char> has_tx, has_blk;
    std::set<uint32_t> mempool;  // tx ids: arrival order
    std::unordered_set<uint32_t> confirmed;  // txs on the adopted branch
    uint32_t tip = 0;
  };

  struct Ev {
    int64_t t = 0;
    uint64_t seq = 0;
    enum Type { TxArrival, BlockSolve, Deliver, MonitorDeliver } type = TxArrival;
    uint32_t peer = 0;
    eventlog::ObjKind okind = eventlog::ObjKind::tx;
    uint32_t oid = 0;
    int32_t forced_parent = -1;  // BlockSolve: rival mines this parent
    int32_t forced_miner = -1;
    uint32_t announce_delay = 0;  // Deliver: origin holds its announcements
  };
  struct Later {
    bool operator()(const Ev& a, const Ev& b) const {
      return a.t != b.t ? a.t > b.t : a.seq > b.seq;
    }
  };

  std::vector<TxInfo> txs;
  std::vector<BlkInfo> blks;
  std::vector<Peer> peers;
  std::vector<uint32_t> mempool_refs;  // how many mempools hold each tx
  std::priority_queue<Ev, std::vector<Ev>, Later> q;
  uint64_t next_seq = 0;
  uint64_t tx_counter = 0, blk_counter = 0;

  explicit Engine(const SimConfig& c) : cfg(c), rng(c.rng_seed) {}

  void push(Ev e) {
    e.seq = next_seq++;
    q.push(e);
  }

  int64_t hop_ms() {
    double v;
    if (cfg.latency_model == "constant") v = cfg.latency_ms;
    else if (cfg.latency_model == "uniform")
      v = cfg.latency_min_ms + rng.uniform01() * (cfg.latency_max_ms - cfg.latency_min_ms);
    else v = rng.exponential(cfg.latency_mean_ms);
    return std::llround(v);
  }

  void audit(uint64_t ts, const char* type, size_t peer, eventlog::ObjKind k,
             const std::string& hash) {
    out.audit.push_back({ts, type, out.peer_names[peer], std::string(eventlog::kind_name(k)),
                         hash});
  }

  // Flood an object from a peer that just got it: one hop to each neighbor
  // plus the monitor link.
  void announce(int64_t t, uint32_t from, eventlog::ObjKind k, uint32_t oid) {
    for (size_t nb : out.topo.adj[from])
      push({t + hop_ms(), 0, Ev::Deliver, static_cast<uint32_t>(nb), k, oid});
    push({t + hop_ms(), 0, Ev::MonitorDeliver, from, k, oid});
  }

  void confirm(Peer& p, uint32_t blk) {
    for (uint32_t id : blks[blk].txs) {
      if (p.mempool.erase(id)) --mempool_refs[id];
      p.confirmed.insert(id);
    }
  }

  void unconfirm(Peer& p, uint32_t blk) {
    for (uint32_t id : blks[blk].txs) {
      p.confirmed.erase(id);
      if (p.mempool.insert(id).second) ++mempool_refs[id];
    }
  }

  // Adopt new_tip (strictly higher than the current tip): rewind the old
  // branch to the common ancestor, then confirm the new branch.
  void adopt(Peer& p, uint32_t new_tip) {
    std::vector<uint32_t> incoming;
    int32_t a = static_cast<int32_t>(p.tip), b = static_cast<int32_t>(new_tip);
    while (blks[b].height > blks[a].height) {
      incoming.push_back(b);
      b = blks[b].parent;
    }
    while (a != b) {
      unconfirm(p, a);
      incoming.push_back(b);
      a = blks[a].parent;
      b = blks[b].parent;
    }
    for (auto it = incoming.rbegin(); it != incoming.rend(); ++it) confirm(p, *it);
    p.tip = new_tip;
  }

  void on_tx_arrival(int64_t t) {
    if (cfg.tx_rate_per_s > 0)
      push({t + std::llround(rng.exponential(1000.0 / cfg.tx_rate_per_s)), 0, Ev::TxArrival});
    TxInfo tx;
    tx.txid = object_hash("tx", cfg.rng_seed, tx_counter++);
    tx.valid = !rng.bernoulli(cfg.invalid_tx_prob);
    if (tx.valid) {
      tx.value = static_cast<uint64_t>(rng.log_uniform_i64(
          static_cast<int64_t>(cfg.value_min_sats), static_cast<int64_t>(cfg.value_max_sats)));
      tx.fee = rng.uniform_u64(cfg.fee_min_sats, cfg.fee_max_sats);
      tx.locktime = rng.bernoulli(cfg.locktime_tx_prob);
      ++out.generated_valid;
    } else {
      ++out.generated_invalid;
    }
    uint32_t origin = static_cast<uint32_t>(rng.uniform_index(cfg.peer_count));
    uint32_t delay = rng.bernoulli(cfg.tx_delayed_announce_prob)
                         ? static_cast<uint32_t>(cfg.tx_delayed_announce_ms)
                         : 0;
    uint32_t id = static_cast<uint32_t>(txs.size());
    txs.push_back(std::move(tx));
    mempool_refs.push_back(0);
    audit(static_cast<uint64_t>(t), "tx_created", origin, eventlog::ObjKind::tx,
          txs[id].txid);
    push({t, 0, Ev::Deliver, origin, eventlog::ObjKind::tx, id, -1, -1, delay});
  }

  bool policy_takes(const TxInfo& tx) {
    switch (cfg.policy.kind) {
      case MinerPolicy::IncludeAll: return true;
      case MinerPolicy::ValueThreshold: return tx.value >= cfg.policy.value_threshold_sats;
      case MinerPolicy::SkipProb:
        if (tx.value >= cfg.policy.skip_value_cutoff_sats) return true;
        return !rng.bernoulli(cfg.policy.skip_prob);
    }
    return true;
  }

  void on_block_solve(int64_t t, const Ev& ev) {
    bool rival = ev.forced_parent >= 0;
    if (!rival) {
      double dt = cfg.block_interval_model == "constant"
                      ? cfg.block_interval_mean_ms
                      : rng.exponential(cfg.block_interval_mean_ms);
      push({t + std::max<int64_t>(1, std::llround(dt)), 0, Ev::BlockSolve});
    }
    uint32_t miner = rival ? static_cast<uint32_t>(ev.forced_miner)
                           : static_cast<uint32_t>(rng.uniform_index(cfg.miner_count));
    int32_t parent = rival ? ev.forced_parent : static_cast<int32_t>(peers[miner].tip);

    BlkInfo b;
    b.hash = object_hash("block", cfg.rng_seed, blk_counter++);
    b.parent = parent;
    b.height = blks[parent].height + 1;
    b.time_ms = static_cast<uint64_t>(t);
    b.pow_valid = rival || !rng.bernoulli(cfg.invalid_block_prob);
    if (b.pow_valid) {
      // A racing miner may not have processed the forced parent's branch yet;
      // its stale mempool must not re-include a tx that branch already holds.
      std::unordered_set<uint32_t> on_branch;
      if (rival)
        for (int32_t a = parent; a >= 0; a = blks[a].parent)
          for (uint32_t id : blks[a].txs) on_branch.insert(id);
      for (uint32_t id : peers[miner].mempool) {
        if (b.txs.size() >= cfg.policy.max_block_txs) break;
        if (rival && on_branch.count(id)) continue;
        if (policy_takes(txs[id])) b.txs.push_back(id);
      }
      for (uint32_t id : b.txs) txs[id].in_block_record = true;
    }
    uint32_t bid = static_cast<uint32_t>(blks.size());
    blks.push_back(std::move(b));
    audit(static_cast<uint64_t>(t), "block_mined", miner, eventlog::ObjKind::block,
          blks[bid].hash);
    push({t, 0, Ev::Deliver, miner, eventlog::ObjKind::block, bid});

    if (!rival && blks[bid].pow_valid && cfg.fork_prob > 0 && rng.bernoulli(cfg.fork_prob)) {
      // A second miner solved the same parent moments later.
      uint32_t other = static_cast<uint32_t>(rng.uniform_index(cfg.miner_count - 1));
      if (other >= miner) ++other;
      int64_t dt = static_cast<int64_t>(rng.uniform_u64(1, cfg.fork_race_window_ms));
      push({t + dt, 0, Ev::BlockSolve, 0, eventlog::ObjKind::block, 0, parent,
            static_cast<int32_t>(other)});
    }
  }

  void on_deliver(int64_t t, const Ev& ev) {
    Peer& p = peers[ev.peer];
    if (ev.okind == eventlog::ObjKind::tx) {
      if (p.has_tx.size() <= ev.oid) p.has_tx.resize(ev.oid + 1, 0);
      if (p.has_tx[ev.oid]) return;
      p.has_tx[ev.oid] = 1;
      const TxInfo& tx = txs[ev.oid];
      if (tx.valid && !p.confirmed.count(ev.oid))
        if (p.mempool.insert(ev.oid).second) ++mempool_refs[ev.oid];
      audit(static_cast<uint64_t>(t), "deliver", ev.peer, eventlog::ObjKind::tx, tx.txid);
    } else {
      if (p.has_blk.size() <= ev.oid) p.has_blk.resize(ev.oid + 1, 0);
      if (p.has_blk[ev.oid]) return;
      p.has_blk[ev.oid] = 1;
      const BlkInfo& b = blks[ev.oid];
      if (b.pow_valid && b.height > blks[p.tip].height) adopt(p, ev.oid);
      audit(static_cast<uint64_t>(t), "deliver", ev.peer, eventlog::ObjKind::block, b.hash);
    }
    announce(t + ev.announce_delay, ev.peer, ev.okind, ev.oid);
  }

  void on_monitor_deliver(int64_t t, const Ev& ev) {
    const std::string& hash =
        ev.okind == eventlog::ObjKind::tx ? txs[ev.oid].txid : blks[ev.oid].hash;
    out.events.push_back(
        {static_cast<uint64_t>(t), out.peer_names[ev.peer], ev.okind, hash});
    audit(static_cast<uint64_t>(t), "monitor_inv", ev.peer, ev.okind, hash);
  }

  void finalize() {
    // Main chain: the highest valid tip, earliest-mined on a tie.
    uint32_t best = 0;
    for (uint32_t i = 1; i < blks.size(); ++i)
      if (blks[i].pow_valid && blks[i].height > blks[best].height) best = i;
    std::unordered_set<uint32_t> on_main;
    for (int32_t i = static_cast<int32_t>(best); i >= 0; i = blks[i].parent) {
      blks[i].main_chain = true;
      for (uint32_t id : blks[i].txs) on_main.insert(id);
    }

    for (const auto& b : blks) {
      chain::BlockRecord rec;
      rec.hash = b.hash;
      rec.height = b.height;
      rec.prev = b.parent < 0 ? std::string(64, '0') : blks[b.parent].hash;
      rec.time_ms = b.time_ms;
      rec.pow_valid = b.pow_valid;
      rec.main_chain = b.main_chain;
      for (uint32_t id : b.txs)
        rec.txs.push_back({txs[id].txid, txs[id].value, txs[id].fee, txs[id].locktime, false});
      out.blocks.push_back(std::move(rec));
    }

    for (uint32_t id = 0; id < txs.size(); ++id) {
      const TxInfo& tx = txs[id];
      if (!tx.valid) continue;
      TxFate fate;
      if (on_main.count(id)) {
        fate = TxFate::Included;
        ++out.included;
      } else if (mempool_refs[id] > 0) {
        fate = TxFate::Mempool;
        ++out.in_mempool;
      } else {
        fate = TxFate::Skipped;
        ++out.policy_skipped;
      }
      out.fates.emplace(tx.txid, fate);
      if (!tx.in_block_record)
        out.standalone.push_back({tx.txid, tx.value, tx.fee, tx.locktime, false});
    }
  }

  RunResult run() {
    cfg.validate();
    out.topo = build_topology(cfg, rng);
    for (size_t i = 0; i < cfg.peer_count; ++i) out.peer_names.push_back(peer_name(i));
    peers.assign(cfg.peer_count, {});

    BlkInfo genesis;
    genesis.hash = object_hash("block", cfg.rng_seed, blk_counter++);
    genesis.pow_valid = true;
    blks.push_back(std::move(genesis));
    for (auto& p : peers) {
      p.has_blk.assign(1, 1);
      p.tip = 0;
    }

    if (cfg.tx_rate_per_s > 0)
      push({std::llround(rng.exponential(1000.0 / cfg.tx_rate_per_s)), 0, Ev::TxArrival});
    double first_dt = cfg.block_interval_model == "constant"
                          ? cfg.block_interval_mean_ms
                          : rng.exponential(cfg.block_interval_mean_ms);
    push({std::max<int64_t>(1, std::llround(first_dt)), 0, Ev::BlockSolve});

    while (!q.empty() && q.top().t < static_cast<int64_t>(cfg.duration_ms)) {
      Ev ev = q.top();
      q.pop();
      switch (ev.type) {
        case Ev::TxArrival: on_tx_arrival(ev.t); break;
        case Ev::BlockSolve: on_block_solve(ev.t, ev); break;
        case Ev::Deliver: on_deliver(ev.t, ev); break;
        case Ev::MonitorDeliver: on_monitor_deliver(ev.t, ev); break;
      }
    }
    finalize();
    return std::move(out);
  }
};

}  // namespace detail

// Single-threaded, deterministic run. The monitor mode field is advisory here;
// this is always the in-process engine.
inline RunResult run(const SimConfig& cfg) { return detail::Engine(cfg).run(); }

// ---- outputs -----------------------------------------------------------------

constexpr const char* kAuditCsvHeader = "ts_ms,type,peer,kind,hash";

inline void write_audit(const std::string& path, const std::vector<AuditEntry>& audit) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw SimError(SimError::Io, "cannot write " + path);
  out << kAuditCsvHeader << "\n";
  for (const auto& a : audit)
    out << a.ts_ms << ',' << a.type << ',' << a.peer << ',' << a.kind << ',' << a.hash << "\n";
  if (!out) throw SimError(SimError::Io, "write failed: " + path);
}

inline std::vector<AuditEntry> read_audit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SimError(SimError::Io, "cannot open " + path);
  std::vector<AuditEntry> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != kAuditCsvHeader)
        throw SimError(SimError::Io, path + ":1: bad header");
      continue;
    }
    if (line.empty()) continue;
    AuditEntry a;
    size_t c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1),
           c4 = line.find(',', c3 + 1);
    if (c4 == std::string::npos)
      throw SimError(SimError::Io, path + ":" + std::to_string(lineno) + ": expected 5 fields");
    a.ts_ms = std::stoull(line.substr(0, c1));
    a.type = line.substr(c1 + 1, c2 - c1 - 1);
    a.peer = line.substr(c2 + 1, c3 - c2 - 1);
    a.kind = line.substr(c3 + 1, c4 - c3 - 1);
    a.hash = line.substr(c4 + 1);
    out.push_back(std::move(a));
  }
  return out;
}

// Writes the three run artifacts, replacing any previous files.
inline void write_outputs(const RunResult& r, const std::string& log_path,
                          const std::string& ledger_path, const std::string& audit_path) {
  std::remove(log_path.c_str());
  eventlog::Writer w(log_path);
  for (const auto& e : r.events) w.append(e);
  w.flush();
  chain::write_ledger(ledger_path, r.blocks, r.standalone);
  write_audit(audit_path, r.audit);
}

// ---- monitor audit -----------------------------------------------------------

struct AuditReport {
  std::vector<std::string> violations;
  size_t matched = 0;
  bool clean() const { return violations.empty(); }
};

// Verifies the monitor stayed passive and that every logged event matches a
// scheduled monitor delivery, with a timestamp tolerance for socket runs.
inline AuditReport audit_monitor(const std::vector<eventlog::InvEvent>& log,
                                 const std::vector<AuditEntry>& audit,
                                 uint64_t ts_tolerance_ms = 0) {
  AuditReport rep;
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<uint64_t>> scheduled;
  for (const auto& a : audit) {
    if (a.type == "monitor_sent") {
      rep.violations.push_back("monitor sent traffic at " + std::to_string(a.ts_ms) + " to " +
                               a.peer);
      continue;
    }
    if (a.type == "monitor_inv") scheduled[{a.peer, a.kind, a.hash}].push_back(a.ts_ms);
  }
  for (const auto& e : log) {
    auto it = scheduled.find({e.peer, std::string(eventlog::kind_name(e.kind)), e.hash});
    bool found = false;
    if (it != scheduled.end()) {
      auto& slots = it->second;
      for (size_t i = 0; i < slots.size(); ++i) {
        uint64_t diff = slots[i] > e.ts_ms ? slots[i] - e.ts_ms : e.ts_ms - slots[i];
        if (diff <= ts_tolerance_ms) {
          slots.erase(slots.begin() + static_cast<int64_t>(i));
          found = true;
          break;
        }
      }
    }
    if (found) ++rep.matched;
    else
      rep.violations.push_back("unscheduled monitor event: " + e.peer + " " +
                               std::string(eventlog::kind_name(e.kind)) + " " + e.hash + " at " +
                               std::to_string(e.ts_ms));
  }
  return rep;
}

// ---- loopback mode -----------------------------------------------------------

// Replays the deterministic schedule over real sockets: every peer is a TCP
// listener the monitor handshakes with; peers then push their inv messages at
// the scheduled offsets and the monitor records what it receives. Event
// multiset matches the in-process run; timestamps shift by scheduler jitter.
inline RunResult run_loopback(const SimConfig& cfg) {
  RunResult base = run(cfg);
  size_t n = cfg.peer_count;

  std::vector<std::vector<eventlog::InvEvent>> schedule(n);
  std::map<std::string, size_t> peer_index;
  for (size_t i = 0; i < n; ++i) peer_index[base.peer_names[i]] = i;
  for (const auto& e : base.events) schedule[peer_index[e.peer]].push_back(e);

  std::vector<std::unique_ptr<net::TcpListener>> listeners;
  for (size_t i = 0; i < n; ++i) listeners.push_back(std::make_unique<net::TcpListener>(0));

  std::mutex mu;
  std::condition_variable cv;
  bool started = false;
  std::chrono::steady_clock::time_point t0;
  std::vector<eventlog::InvEvent> received;
  std::vector<AuditEntry> extra_audit;
  std::vector<std::string> errors;

  wire::VersionInfo monitor_version;
  monitor_version.user_agent = "/blocksonar-monitor/";
  wire::VersionInfo peer_version;
  peer_version.user_agent = "/blocksonar-simpeer/";

  auto peer_main = [&](size_t i) {
    try {
      auto conn = listeners[i]->accept(10'000);
      wire::handshake_accept(*conn, peer_version, wire::kSimMagic);
      {
        std::unique_lock<std::mutex> lk(mu);
        cv.wait(lk, [&] { return started; });
      }
      for (const auto& e : schedule[i]) {
        std::this_thread::sleep_until(t0 + std::chrono::milliseconds(e.ts_ms));
        wire::InvVector v;
        v.object_kind = e.kind == eventlog::ObjKind::tx ? wire::kInvTx : wire::kInvBlock;
        auto raw = from_hex(e.hash);
        std::copy(raw.begin(), raw.end(), v.hash.begin());
        wire::send_message(*conn, wire::kSimMagic, "inv",
                           wire::encode_inv(std::span(&v, 1)));
      }
      // The monitor must never speak after the handshake; any byte is a
      // passivity violation worth auditing.
      try {
        uint8_t buf;
        if (conn->read_some(&buf, 1, 50) > 0) {
          std::lock_guard<std::mutex> lk(mu);
          extra_audit.push_back({0, "monitor_sent", base.peer_names[i], "", ""});
        }
      } catch (const wire::ChannelError&) {
      }
      conn->shutdown();
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lk(mu);
      errors.push_back("peer " + std::to_string(i) + ": " + e.what());
    }
  };

  auto monitor_main = [&](size_t i, std::unique_ptr<net::TcpConn> conn) {
    try {
      {
        std::unique_lock<std::mutex> lk(mu);
        cv.wait(lk, [&] { return started; });
      }
      for (;;) {
        wire::DecodedMessage m;
        try {
          m = wire::read_message(*conn, wire::kSimMagic,
                                 static_cast<int>(cfg.duration_ms) + 10'000);
        } catch (const wire::WireError&) {
          break;  // peer closed
        } catch (const wire::ChannelError&) {
          break;
        }
        if (m.command != "inv") continue;
        uint64_t ts = static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                std::chrono::steady_clock::now() - t0)
                                                .count());
        for (const auto& v : wire::decode_inv(m.payload)) {
          std::lock_guard<std::mutex> lk(mu);
          received.push_back({ts, base.peer_names[i],
                              v.object_kind == wire::kInvTx ? eventlog::ObjKind::tx
                                                            : eventlog::ObjKind::block,
                              v.hash_hex()});
        }
      }
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lk(mu);
      errors.push_back("monitor " + std::to_string(i) + ": " + e.what());
    }
  };

  std::vector<std::thread> peer_threads;
  for (size_t i = 0; i < n; ++i) peer_threads.emplace_back(peer_main, i);

  std::vector<std::thread> monitor_threads;
  try {
    for (size_t i = 0; i < n; ++i) {
      auto conn = net::TcpConn::connect("127.0.0.1", listeners[i]->port(), 10'000);
      wire::handshake(*conn, monitor_version, wire::kSimMagic);
      monitor_threads.emplace_back(monitor_main, i, std::move(conn));
    }
  } catch (...) {
    {
      std::lock_guard<std::mutex> lk(mu);
      started = true;  // unblock peers so threads can exit
      t0 = std::chrono::steady_clock::now();
    }
    cv.notify_all();
    for (auto& th : peer_threads) th.join();
    for (auto& th : monitor_threads) th.join();
    throw;
  }

  {
    std::lock_guard<std::mutex> lk(mu);
    t0 = std::chrono::steady_clock::now();
    started = true;
  }
  cv.notify_all();
  for (auto& th : peer_threads) th.join();
  for (auto& th : monitor_threads) th.join();

  if (!errors.empty())
    throw SimError(SimError::Io, "loopback run failed: " + errors.front());

  std::sort(received.begin(), received.end(),
            [](const eventlog::InvEvent& a, const eventlog::InvEvent& b) {
              return std::tie(a.ts_ms, a.peer, a.hash) < std::tie(b.ts_ms, b.peer, b.hash);
            });
  base.events = std::move(received);
  base.audit.insert(base.audit.end(), extra_audit.begin(), extra_audit.end());
  return base;
}

}  // namespace blocksonar::sim
