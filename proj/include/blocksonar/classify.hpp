#pragma once

// Block and transaction taxonomy over a closed event log plus a ledger view,
// and the analysis-set filter that strips boundary, locktime and coinbase
// transactions before delay statistics are computed.
//
// Block classes:
//   IB    invalid proof of work, propagated anyway
//   FB    valid proof of work, lost the chain race
//   MDLB  main chain, first seen in-window and before any higher block
//   EB    main chain but re-announced late (or seen outside the window)
// Transaction classes:
//   IT           not known valid by the ledger
//   BT           seen before its including block
//   ET           seen at/after its including block
//   UNCONFIRMED  valid but never included within the ledger's horizon

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "blocksonar/chainview.hpp"
#include "blocksonar/eventlog.hpp"

namespace blocksonar::classify {

enum class BlockClass { MDLB, EB, FB, IB };
enum class TxClass { BT, ET, IT, UNCONFIRMED };

inline const char* name_of(BlockClass c) {
  switch (c) {
    case BlockClass::MDLB: return "MDLB";
    case BlockClass::EB: return "EB";
    case BlockClass::FB: return "FB";
    case BlockClass::IB: return "IB";
  }
  return "?";
}

inline const char* name_of(TxClass c) {
  switch (c) {
    case TxClass::BT: return "BT";
    case TxClass::ET: return "ET";
    case TxClass::IT: return "IT";
    case TxClass::UNCONFIRMED: return "UNCONFIRMED";
  }
  return "?";
}

class ClassifyError : public std::runtime_error {
 public:
  enum Kind { UnknownHash, UnknownToChain, BadWindow };
  ClassifyError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

struct ListeningWindow {
  uint64_t start_ms = 0;
  uint64_t end_ms = 0;  // half-open: [start_ms, end_ms)

  bool contains(uint64_t ts) const { return ts >= start_ms && ts < end_ms; }
};

// One classification.csv row. class_label is a taxonomy name or "UNKNOWN" for
// a block the ledger has no record of (reported, never dropped).
struct ClassifiedHash {
  std::string hash;
  eventlog::ObjKind kind = eventlog::ObjKind::tx;
  std::string class_label;
  uint64_t first_ts_ms = 0;
  std::string first_peer;
  bool operator==(const ClassifiedHash&) const = default;
};

constexpr const char* kClassificationCsvHeader = "hash,kind,class,first_ts_ms,first_peer";

// Precomputes per-height observation minima once, then answers per-hash
// queries. All methods are const after construction.
class Classifier {
 public:
  Classifier(const chain::ChainView& chain, const eventlog::Log& log, ListeningWindow window)
      : chain_(chain), log_(log), window_(window) {
    if (window.start_ms >= window.end_ms)
      throw ClassifyError(ClassifyError::BadWindow, "window start must precede end");

    // Earliest block-kind observation per main-chain height, then the minimum
    // over all greater heights: "the next block was discovered" at that time.
    size_t n = chain_.empty_main() ? 0 : chain_.tip_height() + 1;
    std::vector<uint64_t> obs_at(n, kNever);
    for (size_t h = 0; h < n; ++h) {
      auto fo = log_.first_observation(chain_.block_at_height(h)->hash, eventlog::ObjKind::block);
      if (fo) obs_at[h] = fo->first_ts_ms;
    }
    min_obs_above_.assign(n, kNever);
    uint64_t running = kNever;
    for (size_t h = n; h-- > 0;) {
      min_obs_above_[h] = running;
      running = std::min(running, obs_at[h]);
    }
  }

  BlockClass classify_block(const std::string& hash) const {
    auto fo = log_.first_observation(hash, eventlog::ObjKind::block);
    if (!fo)
      throw ClassifyError(ClassifyError::UnknownHash, "no block events for " + hash);
    const chain::BlockRecord* b = chain_.block(hash);
    if (!b)
      throw ClassifyError(ClassifyError::UnknownToChain, "pow status unavailable for " + hash);
    if (!b->pow_valid) return BlockClass::IB;
    if (!b->main_chain) return BlockClass::FB;
    if (window_.contains(fo->first_ts_ms) && fo->first_ts_ms < min_obs_above_[b->height])
      return BlockClass::MDLB;
    return BlockClass::EB;
  }

  TxClass classify_tx(const std::string& txid) const {
    auto fo = log_.first_observation(txid, eventlog::ObjKind::tx);
    if (!fo) throw ClassifyError(ClassifyError::UnknownHash, "no tx events for " + txid);
    if (chain_.tx(txid) == nullptr) return TxClass::IT;
    auto inc = chain_.inclusion(txid);
    if (!inc) return TxClass::UNCONFIRMED;
    return fo->first_ts_ms < block_obs(inc->block_hash) ? TxClass::BT : TxClass::ET;
  }

  // First observation of the including block; a block the monitor missed
  // falls back to its ledger timestamp.
  uint64_t block_obs(const std::string& block_hash) const {
    auto fo = log_.first_observation(block_hash, eventlog::ObjKind::block);
    if (fo) return fo->first_ts_ms;
    const chain::BlockRecord* b = chain_.block(block_hash);
    if (!b)
      throw ClassifyError(ClassifyError::UnknownToChain, "unknown block " + block_hash);
    return b->time_ms;
  }

  // Every observed hash gets a row; blocks absent from the ledger are
  // reported as UNKNOWN. Rows sorted by (first_ts_ms, hash).
  std::vector<ClassifiedHash> classify_all() const {
    std::vector<ClassifiedHash> rows;
    for (const auto& fo : log_.first_observations(eventlog::ObjKind::block)) {
      ClassifiedHash row{fo.hash, fo.kind, {}, fo.first_ts_ms, fo.first_peer};
      try {
        row.class_label = name_of(classify_block(fo.hash));
      } catch (const ClassifyError& e) {
        if (e.kind != ClassifyError::UnknownToChain) throw;
        row.class_label = "UNKNOWN";
      }
      rows.push_back(std::move(row));
    }
    for (const auto& fo : log_.first_observations(eventlog::ObjKind::tx))
      rows.push_back(
          {fo.hash, fo.kind, name_of(classify_tx(fo.hash)), fo.first_ts_ms, fo.first_peer});
    std::sort(rows.begin(), rows.end(), [](const ClassifiedHash& a, const ClassifiedHash& b) {
      return std::tie(a.first_ts_ms, a.hash) < std::tie(b.first_ts_ms, b.hash);
    });
    return rows;
  }

  // The MDLBs of the window ordered by height.
  std::vector<std::string> mdlb_hashes() const {
    std::vector<std::string> out;
    if (chain_.empty_main()) return out;
    for (uint64_t h = 0; h <= chain_.tip_height(); ++h) {
      const std::string& hash = chain_.block_at_height(h)->hash;
      auto fo = log_.first_observation(hash, eventlog::ObjKind::block);
      if (fo && window_.contains(fo->first_ts_ms) && fo->first_ts_ms < min_obs_above_[h])
        out.push_back(hash);
    }
    return out;
  }

  // Transactions whose delay is measurable without boundary bias: BT or
  // UNCONFIRMED, first seen within [first-MDLB obs, last-MDLB obs), and
  // neither locktime-deferred nor coinbase. Empty when the window holds
  // fewer than two distinguishable boundaries.
  std::set<std::string> analysis_set() const {
    std::set<std::string> out;
    auto mdlbs = mdlb_hashes();
    if (mdlbs.empty()) return out;
    uint64_t lo = kNever, hi = 0;
    for (const auto& h : mdlbs) {
      uint64_t t = log_.first_observation(h, eventlog::ObjKind::block)->first_ts_ms;
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    for (const auto& fo : log_.first_observations(eventlog::ObjKind::tx)) {
      if (fo.first_ts_ms < lo || fo.first_ts_ms >= hi) continue;
      TxClass c = classify_tx(fo.hash);
      if (c != TxClass::BT && c != TxClass::UNCONFIRMED) continue;
      const chain::TxRecord* tx = chain_.tx(fo.hash);
      if (tx->locktime_set || tx->is_coinbase) continue;
      out.insert(fo.hash);
    }
    return out;
  }

  // Earliest observation of any main-chain block above this height;
  // UINT64_MAX when no higher block was ever seen.
  uint64_t next_block_obs(uint64_t height) const {
    return height < min_obs_above_.size() ? min_obs_above_[height] : kNever;
  }

  const ListeningWindow& window() const { return window_; }

 private:
  static constexpr uint64_t kNever = UINT64_MAX;

  const chain::ChainView& chain_;
  const eventlog::Log& log_;
  ListeningWindow window_;
  std::vector<uint64_t> min_obs_above_;
};

// One-shot wrappers matching the operation signatures.
inline BlockClass classify_block(const std::string& hash, const chain::ChainView& chain,
                                 const eventlog::Log& log, ListeningWindow window) {
  return Classifier(chain, log, window).classify_block(hash);
}

inline TxClass classify_tx(const std::string& txid, const chain::ChainView& chain,
                           const eventlog::Log& log, ListeningWindow window) {
  return Classifier(chain, log, window).classify_tx(txid);
}

inline std::set<std::string> analysis_set(const chain::ChainView& chain,
                                          const eventlog::Log& log, ListeningWindow window) {
  return Classifier(chain, log, window).analysis_set();
}

inline std::map<std::string, size_t> class_counts(const std::vector<ClassifiedHash>& rows) {
  std::map<std::string, size_t> counts;
  for (const auto& r : rows) ++counts[r.class_label];
  return counts;
}

inline void write_classification_csv(const std::string& path,
                                     const std::vector<ClassifiedHash>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kClassificationCsvHeader << "\n";
  for (const auto& r : rows)
    out << r.hash << ',' << eventlog::kind_name(r.kind) << ',' << r.class_label << ','
        << r.first_ts_ms << ',' << r.first_peer << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<ClassifiedHash> read_classification_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<ClassifiedHash> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != kClassificationCsvHeader)
        throw std::runtime_error(path + ":1: bad header: " + line);
      continue;
    }
    if (line.empty()) continue;
    ClassifiedHash r;
    size_t c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1),
           c4 = line.find(',', c3 + 1);
    if (c4 == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 5 fields");
    r.hash = line.substr(0, c1);
    auto kind = eventlog::kind_from(line.substr(c1 + 1, c2 - c1 - 1));
    if (!kind)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad kind");
    r.kind = *kind;
    r.class_label = line.substr(c2 + 1, c3 - c2 - 1);
    r.first_ts_ms = std::stoull(line.substr(c3 + 1, c4 - c3 - 1));
    r.first_peer = line.substr(c4 + 1);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace blocksonar::classify
