#pragma once

// Ground-truth ledger: blocks, heights, inclusion and fee/value data, loaded
// from a JSONL file. Block lines carry the chain; bare {"tx":…} lines carry
// valid transactions that never made it into a block (needed to tell a
// not-yet-confirmed transaction from an invalid one).

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "blocksonar/eventlog.hpp"
#include "blocksonar/util.hpp"

namespace blocksonar::chain {

using ledger_json = nlohmann::ordered_json;

class ChainError : public std::runtime_error {
 public:
  enum Kind { ParseError, InconsistentChain, OutOfRange };
  ChainError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

struct TxRecord {
  std::string txid;
  uint64_t value_sats = 0;
  uint64_t fee_sats = 0;
  bool locktime_set = false;
  bool is_coinbase = false;
  bool operator==(const TxRecord&) const = default;
};

struct BlockRecord {
  std::string hash;
  uint64_t height = 0;
  std::string prev;
  uint64_t time_ms = 0;
  bool pow_valid = false;
  bool main_chain = false;
  std::vector<TxRecord> txs;
  bool operator==(const BlockRecord&) const = default;
};

struct Inclusion {
  std::string block_hash;
  uint64_t height = 0;
  uint64_t block_time_ms = 0;
  bool operator==(const Inclusion&) const = default;
};

// ---- JSONL codec (shared with the simulator's emitter) -----------------------

inline ledger_json tx_to_json(const TxRecord& t) {
  return ledger_json{{"txid", t.txid},
                     {"value_sats", t.value_sats},
                     {"fee_sats", t.fee_sats},
                     {"locktime_set", t.locktime_set},
                     {"is_coinbase", t.is_coinbase}};
}

inline ledger_json block_to_json(const BlockRecord& b) {
  ledger_json txs = ledger_json::array();
  for (const auto& t : b.txs) txs.push_back(tx_to_json(t));
  return ledger_json{{"hash", b.hash},     {"height", b.height},
                     {"prev", b.prev},     {"time_ms", b.time_ms},
                     {"pow_valid", b.pow_valid}, {"main_chain", b.main_chain},
                     {"txs", std::move(txs)}};
}

// One JSONL line for a transaction that exists (is valid) but sits outside
// every block in the file.
inline ledger_json standalone_tx_to_json(const TxRecord& t) {
  return ledger_json{{"tx", tx_to_json(t)}};
}

namespace detail {

inline TxRecord tx_from_json(const nlohmann::json& j) {
  TxRecord t;
  t.txid = j.at("txid").get<std::string>();
  t.value_sats = j.at("value_sats").get<uint64_t>();
  t.fee_sats = j.at("fee_sats").get<uint64_t>();
  t.locktime_set = j.at("locktime_set").get<bool>();
  t.is_coinbase = j.at("is_coinbase").get<bool>();
  if (!is_hex_hash(t.txid))
    throw ChainError(ChainError::ParseError, "txid is not 64 lowercase hex: " + t.txid);
  if (t.is_coinbase && t.fee_sats != 0)
    throw ChainError(ChainError::ParseError, "coinbase with nonzero fee: " + t.txid);
  return t;
}

inline BlockRecord block_from_json(const nlohmann::json& j) {
  BlockRecord b;
  b.hash = j.at("hash").get<std::string>();
  b.height = j.at("height").get<uint64_t>();
  b.prev = j.at("prev").get<std::string>();
  b.time_ms = j.at("time_ms").get<uint64_t>();
  b.pow_valid = j.at("pow_valid").get<bool>();
  b.main_chain = j.at("main_chain").get<bool>();
  for (const auto& jt : j.at("txs")) b.txs.push_back(tx_from_json(jt));
  if (!is_hex_hash(b.hash))
    throw ChainError(ChainError::ParseError, "block hash is not 64 lowercase hex: " + b.hash);
  return b;
}

}  // namespace detail

// Immutable after construction. Optionally annotated with network observation
// times so tip height can be asked "as seen from the monitor".
class ChainView {
 public:
  static ChainView load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ChainError(ChainError::ParseError, "cannot open " + path);
    std::vector<BlockRecord> blocks;
    std::vector<TxRecord> loose;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        if (j.contains("tx"))
          loose.push_back(detail::tx_from_json(j.at("tx")));
        else
          blocks.push_back(detail::block_from_json(j));
      } catch (const nlohmann::json::exception& e) {
        throw ChainError(ChainError::ParseError,
                         path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return ChainView(std::move(blocks), std::move(loose));
  }

  ChainView(std::vector<BlockRecord> blocks, std::vector<TxRecord> standalone = {})
      : blocks_(std::move(blocks)), standalone_(std::move(standalone)) {
    build_and_validate();
  }

  const std::vector<BlockRecord>& blocks() const { return blocks_; }
  const std::vector<TxRecord>& standalone_txs() const { return standalone_; }

  const BlockRecord* block(const std::string& hash) const {
    auto it = by_hash_.find(hash);
    return it == by_hash_.end() ? nullptr : &blocks_[it->second];
  }

  // Main chain only; heights are dense in [0, tip_height()].
  const BlockRecord* block_at_height(uint64_t h) const {
    return h < main_by_height_.size() ? &blocks_[main_by_height_[h]] : nullptr;
  }

  bool empty_main() const { return main_by_height_.empty(); }
  uint64_t tip_height() const {
    if (main_by_height_.empty()) throw ChainError(ChainError::OutOfRange, "empty main chain");
    return main_by_height_.size() - 1;
  }

  // Value/fee/locktime data for any transaction the ledger knows to be valid,
  // whether included (any block) or standalone.
  const TxRecord* tx(const std::string& txid) const {
    auto it = tx_where_.find(txid);
    if (it == tx_where_.end()) return nullptr;
    const auto& [block_idx, tx_idx] = it->second;
    return block_idx == kLoose ? &standalone_[tx_idx] : &blocks_[block_idx].txs[tx_idx];
  }

  std::optional<Inclusion> inclusion(const std::string& txid) const {
    auto it = included_at_.find(txid);
    if (it == included_at_.end()) return std::nullopt;
    const BlockRecord& b = blocks_[it->second];
    return Inclusion{b.hash, b.height, b.time_ms};
  }

  // Replaces block times with monitor first observations where available;
  // blocks never seen on the network keep their ledger time.
  void attach_observations(const eventlog::Log& log) {
    for (size_t i = 0; i < blocks_.size(); ++i) {
      auto fo = log.first_observation(blocks_[i].hash, eventlog::ObjKind::block);
      obs_ms_[blocks_[i].hash] = fo ? fo->first_ts_ms : blocks_[i].time_ms;
    }
    build_tip_index();
  }

  // First monitor observation if attached, ledger time otherwise.
  uint64_t effective_time_ms(const std::string& block_hash) const {
    auto it = obs_ms_.find(block_hash);
    if (it != obs_ms_.end()) return it->second;
    const BlockRecord* b = block(block_hash);
    if (!b) throw ChainError(ChainError::OutOfRange, "unknown block " + block_hash);
    return b->time_ms;
  }

  // Height of the highest main-chain block whose effective time is <= ts_ms.
  uint64_t tip_height_at(uint64_t ts_ms) const {
    if (tip_becomes_.empty()) throw ChainError(ChainError::OutOfRange, "empty main chain");
    if (ts_ms < tip_becomes_[0])
      throw ChainError(ChainError::OutOfRange, "timestamp precedes first block");
    auto it = std::upper_bound(tip_becomes_.begin(), tip_becomes_.end(), ts_ms);
    return static_cast<uint64_t>(it - tip_becomes_.begin()) - 1;
  }

 private:
  static constexpr uint32_t kLoose = UINT32_MAX;

  void build_and_validate() {
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const BlockRecord& b = blocks_[i];
      if (!by_hash_.emplace(b.hash, i).second)
        throw ChainError(ChainError::InconsistentChain, "duplicate block hash " + b.hash);
      if (b.main_chain && !b.pow_valid)
        throw ChainError(ChainError::InconsistentChain,
                         "main-chain block without valid pow: " + b.hash);
    }

    std::vector<uint32_t> main_idx;
    for (size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].main_chain) main_idx.push_back(static_cast<uint32_t>(i));
    std::sort(main_idx.begin(), main_idx.end(), [&](uint32_t a, uint32_t b) {
      return blocks_[a].height < blocks_[b].height;
    });
    for (size_t h = 0; h < main_idx.size(); ++h) {
      const BlockRecord& b = blocks_[main_idx[h]];
      if (b.height != h)
        throw ChainError(ChainError::InconsistentChain,
                         b.height > h ? "height gap below block " + b.hash
                                      : "duplicate main-chain height " + std::to_string(b.height));
      if (h > 0 && b.prev != blocks_[main_idx[h - 1]].hash)
        throw ChainError(ChainError::InconsistentChain, "prev mismatch at height " +
                                                            std::to_string(h) + ": " + b.hash);
    }
    main_by_height_ = std::move(main_idx);

    for (size_t i = 0; i < blocks_.size(); ++i) {
      const BlockRecord& b = blocks_[i];
      for (size_t t = 0; t < b.txs.size(); ++t) {
        const std::string& txid = b.txs[t].txid;
        auto [it, fresh] =
            tx_where_.emplace(txid, std::pair{static_cast<uint32_t>(i), static_cast<uint32_t>(t)});
        if (!fresh && b.main_chain && blocks_[it->second.first].main_chain)
          throw ChainError(ChainError::InconsistentChain,
                           "tx included twice on main chain: " + txid);
        // prefer the main-chain copy for value/fee lookups
        if (!fresh && b.main_chain && !blocks_[it->second.first].main_chain)
          it->second = {static_cast<uint32_t>(i), static_cast<uint32_t>(t)};
        if (b.main_chain)
          included_at_.emplace(txid, static_cast<uint32_t>(i));
      }
    }
    for (size_t t = 0; t < standalone_.size(); ++t)
      tx_where_.emplace(standalone_[t].txid, std::pair{kLoose, static_cast<uint32_t>(t)});

    build_tip_index();
  }

  // tip_becomes_[h] = earliest ts at which the answer to tip_height_at is >= h:
  // suffix-min of effective times, so the array is sorted even if a block was
  // observed before its parent.
  void build_tip_index() {
    tip_becomes_.assign(main_by_height_.size(), 0);
    uint64_t suffix_min = UINT64_MAX;
    for (size_t h = main_by_height_.size(); h-- > 0;) {
      const BlockRecord& b = blocks_[main_by_height_[h]];
      auto it = obs_ms_.find(b.hash);
      uint64_t eff = it != obs_ms_.end() ? it->second : b.time_ms;
      suffix_min = std::min(suffix_min, eff);
      tip_becomes_[h] = suffix_min;
    }
  }

  std::vector<BlockRecord> blocks_;
  std::vector<TxRecord> standalone_;
  std::unordered_map<std::string, uint32_t> by_hash_;
  std::vector<uint32_t> main_by_height_;
  std::unordered_map<std::string, std::pair<uint32_t, uint32_t>> tx_where_;
  std::unordered_map<std::string, uint32_t> included_at_;
  std::unordered_map<std::string, uint64_t> obs_ms_;
  std::vector<uint64_t> tip_becomes_;
};

inline void write_ledger(const std::string& path, const std::vector<BlockRecord>& blocks,
                         const std::vector<TxRecord>& standalone = {}) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ChainError(ChainError::ParseError, "cannot write " + path);
  for (const auto& b : blocks) out << block_to_json(b).dump() << "\n";
  for (const auto& t : standalone) out << standalone_tx_to_json(t).dump() << "\n";
  if (!out) throw ChainError(ChainError::ParseError, "write failed: " + path);
}

}  // namespace blocksonar::chain
