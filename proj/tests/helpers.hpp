#pragma once

// Shared fixture builders for the chain/classify/analytics tests.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "blocksonar/chainview.hpp"
#include "blocksonar/eventlog.hpp"

namespace blocksonar::testing {

inline std::string hash_of(unsigned n) {
  char buf[65];
  std::snprintf(buf, sizeof buf, "%064x", n);
  return buf;
}

inline std::string temp_file(const std::string& stem, const std::string& ext) {
  auto dir = std::filesystem::temp_directory_path() / "blocksonar_tests";
  std::filesystem::create_directories(dir);
  return (dir / (stem + "." + std::to_string(::getpid()) + ext)).string();
}

inline chain::TxRecord mk_tx(unsigned txid_n, uint64_t value, uint64_t fee = 0,
                             bool locktime = false, bool coinbase = false) {
  return {hash_of(txid_n), value, fee, locktime, coinbase};
}

// Linear block: hash = base+h, prev = base+h-1 (genesis prev = all-zero).
inline chain::BlockRecord mk_block(unsigned hash_n, uint64_t height, unsigned prev_n,
                                   uint64_t time_ms, std::vector<chain::TxRecord> txs = {},
                                   bool pow_valid = true, bool main_chain = true) {
  chain::BlockRecord b;
  b.hash = hash_of(hash_n);
  b.height = height;
  b.prev = height == 0 ? std::string(64, '0') : hash_of(prev_n);
  b.time_ms = time_ms;
  b.pow_valid = pow_valid;
  b.main_chain = main_chain;
  b.txs = std::move(txs);
  return b;
}

inline eventlog::InvEvent mk_event(uint64_t ts, std::string peer, eventlog::ObjKind kind,
                                   const std::string& hash) {
  return {ts, std::move(peer), kind, hash};
}

}  // namespace blocksonar::testing
