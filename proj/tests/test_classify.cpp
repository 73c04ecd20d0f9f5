#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "blocksonar/classify.hpp"
#include "helpers.hpp"
#include "oracle.hpp"

using namespace blocksonar;
using namespace blocksonar::classify;
using blocksonar::testing::hash_of;
using blocksonar::testing::mk_block;
using blocksonar::testing::mk_event;
using blocksonar::testing::mk_tx;
using eventlog::ObjKind;

namespace {

// Window covering everything unless a test narrows it.
const ListeningWindow kWideWindow{0, UINT64_MAX};

}  // namespace

TEST_CASE("main-chain block seen before its successor is MDLB", "[classify]") {
  chain::ChainView cv({
      mk_block(100, 0, 0, 1000),
      mk_block(101, 1, 100, 601'000),
  });
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(601'000, "a:1", ObjKind::block, hash_of(101)),  // 600 s later
  });
  CHECK(classify_block(hash_of(100), cv, log, kWideWindow) == BlockClass::MDLB);
  CHECK(classify_block(hash_of(101), cv, log, kWideWindow) == BlockClass::MDLB);
}

TEST_CASE("stale block seen after a higher block is EB", "[classify]") {
  chain::ChainView cv({
      mk_block(100, 0, 0, 1000),
      mk_block(101, 1, 100, 2000),
  });
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(2000, "a:1", ObjKind::block, hash_of(101)),
      mk_event(2500, "a:1", ObjKind::block, hash_of(100)),  // height 0 after height 1
  });
  CHECK(classify_block(hash_of(100), cv, log, kWideWindow) == BlockClass::EB);
  CHECK(classify_block(hash_of(101), cv, log, kWideWindow) == BlockClass::MDLB);
}

TEST_CASE("block first seen outside the window is EB", "[classify]") {
  chain::ChainView cv({mk_block(100, 0, 0, 1000)});
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(50, "a:1", ObjKind::block, hash_of(100)),
  });
  CHECK(classify_block(hash_of(100), cv, log, {100, 10'000}) == BlockClass::EB);
  CHECK(classify_block(hash_of(100), cv, log, {0, 10'000}) == BlockClass::MDLB);
}

TEST_CASE("invalid and fork blocks classify by their ledger flags", "[classify]") {
  chain::ChainView cv({
      mk_block(100, 0, 0, 1000),
      mk_block(200, 0, 0, 1000, {}, true, false),   // fork
      mk_block(300, 0, 0, 1000, {}, false, false),  // bad pow
  });
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(1001, "a:1", ObjKind::block, hash_of(200)),
      mk_event(1002, "a:1", ObjKind::block, hash_of(300)),
  });
  CHECK(classify_block(hash_of(200), cv, log, kWideWindow) == BlockClass::FB);
  CHECK(classify_block(hash_of(300), cv, log, kWideWindow) == BlockClass::IB);
}

TEST_CASE("a same-height fork does not end the MDLB span", "[classify]") {
  chain::ChainView cv({
      mk_block(100, 0, 0, 1000),
      mk_block(101, 1, 100, 2000),
      mk_block(201, 1, 100, 1500, {}, true, false),  // fork competitor seen first
  });
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(1500, "a:1", ObjKind::block, hash_of(201)),
      mk_event(2000, "a:1", ObjKind::block, hash_of(101)),
  });
  // the fork at 1500 precedes 101's observation but only greater main-chain
  // heights terminate the span
  CHECK(classify_block(hash_of(101), cv, log, kWideWindow) == BlockClass::MDLB);
  CHECK(classify_block(hash_of(201), cv, log, kWideWindow) == BlockClass::FB);
}

TEST_CASE("block classification errors are explicit", "[classify]") {
  chain::ChainView cv({mk_block(100, 0, 0, 1000)});
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(1100, "a:1", ObjKind::block, hash_of(999)),  // ledger has no record
  });
  Classifier cl(cv, log, kWideWindow);

  bool unknown_hash = false;
  try {
    cl.classify_block(hash_of(777));  // never observed
  } catch (const ClassifyError& e) {
    unknown_hash = e.kind == ClassifyError::UnknownHash;
  }
  CHECK(unknown_hash);

  bool unknown_chain = false;
  try {
    cl.classify_block(hash_of(999));
  } catch (const ClassifyError& e) {
    unknown_chain = e.kind == ClassifyError::UnknownToChain;
  }
  CHECK(unknown_chain);

  CHECK_THROWS_AS(Classifier(cv, log, {5, 5}), ClassifyError);
}

TEST_CASE("tx seen before its block is BT, after is ET", "[classify]") {
  chain::ChainView cv({
      mk_block(100, 0, 0, 1000),
      mk_block(101, 1, 100, 301'000, {mk_tx(1, 500), mk_tx(2, 600)}),
  });
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(301'000, "a:1", ObjKind::block, hash_of(101)),
      mk_event(300'700, "a:1", ObjKind::tx, hash_of(1)),  // 300 s before the block
      mk_event(361'000, "a:1", ObjKind::tx, hash_of(2)),  // 60 s after
  });
  CHECK(classify_tx(hash_of(1), cv, log, kWideWindow) == TxClass::BT);
  CHECK(classify_tx(hash_of(2), cv, log, kWideWindow) == TxClass::ET);
}

TEST_CASE("tx seen exactly at its block observation is ET", "[classify]") {
  chain::ChainView cv({mk_block(100, 0, 0, 1000, {mk_tx(1, 500)})});
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(1000, "b:1", ObjKind::tx, hash_of(1)),
  });
  CHECK(classify_tx(hash_of(1), cv, log, kWideWindow) == TxClass::ET);
}

TEST_CASE("valid-but-unincluded is UNCONFIRMED, unknown is IT", "[classify]") {
  chain::ChainView cv({mk_block(100, 0, 0, 1000)}, {mk_tx(5, 900)});
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(1100, "a:1", ObjKind::tx, hash_of(5)),
      mk_event(1200, "a:1", ObjKind::tx, hash_of(6)),  // ledger never heard of it
  });
  CHECK(classify_tx(hash_of(5), cv, log, kWideWindow) == TxClass::UNCONFIRMED);
  CHECK(classify_tx(hash_of(6), cv, log, kWideWindow) == TxClass::IT);
}

TEST_CASE("unobserved including block falls back to ledger time", "[classify]") {
  chain::ChainView cv({mk_block(100, 0, 0, 5000, {mk_tx(1, 500)})});
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(4000, "a:1", ObjKind::tx, hash_of(1)),  // block itself never announced
  });
  CHECK(classify_tx(hash_of(1), cv, log, kWideWindow) == TxClass::BT);
}

TEST_CASE("analysis set keeps mid-window BT and censored txs only", "[classify]") {
  // MDLB observations at 1000 (first) and 10000 (last); analysis span [1000, 10000)
  chain::ChainView cv(
      {
          mk_block(100, 0, 0, 1000),
          mk_block(101, 1, 100, 10'000,
                   {mk_tx(1, 500), mk_tx(2, 600), mk_tx(3, 700, 0, true), mk_tx(9, 50, 0, false, true)}),
      },
      {mk_tx(4, 800), mk_tx(5, 850)});
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(10'000, "a:1", ObjKind::block, hash_of(101)),
      mk_event(2000, "a:1", ObjKind::tx, hash_of(1)),    // BT in span
      mk_event(900, "a:1", ObjKind::tx, hash_of(2)),     // BT before first MDLB: out
      mk_event(2500, "a:1", ObjKind::tx, hash_of(3)),    // locktime: out
      mk_event(3000, "a:1", ObjKind::tx, hash_of(4)),    // UNCONFIRMED in span
      mk_event(10'000, "a:1", ObjKind::tx, hash_of(5)),  // at last MDLB obs: out
      mk_event(2600, "a:1", ObjKind::tx, hash_of(9)),    // coinbase echo: out
      mk_event(2700, "a:1", ObjKind::tx, hash_of(6)),    // IT: out
  });
  auto set = analysis_set(cv, log, kWideWindow);
  CHECK(set == std::set<std::string>{hash_of(1), hash_of(4)});
}

TEST_CASE("analysis set is empty without an MDLB span", "[classify]") {
  chain::ChainView cv({mk_block(100, 0, 0, 1000, {mk_tx(1, 500)})});
  {
    eventlog::Log log = eventlog::Log::from_events({
        mk_event(2000, "a:1", ObjKind::tx, hash_of(1)),  // block never observed
    });
    CHECK(analysis_set(cv, log, kWideWindow).empty());
  }
  {
    // single MDLB: span [obs, obs) is empty
    eventlog::Log log = eventlog::Log::from_events({
        mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
        mk_event(500, "a:1", ObjKind::tx, hash_of(1)),
    });
    CHECK(analysis_set(cv, log, kWideWindow).empty());
  }
}

TEST_CASE("every observed hash receives exactly one row", "[classify]") {
  Rng rng(0x5eed3001);
  std::vector<chain::BlockRecord> blocks = {
      mk_block(100, 0, 0, 1000, {mk_tx(1, 500)}),
      mk_block(101, 1, 100, 2000, {mk_tx(2, 600)}),
      mk_block(200, 1, 100, 2100, {}, true, false),
  };
  std::vector<eventlog::InvEvent> events;
  for (unsigned h : {100, 101, 200, 900})  // 900 unknown to the ledger
    events.push_back(mk_event(rng.uniform_u64(1000, 3000), "a:1", ObjKind::block, hash_of(h)));
  for (unsigned t : {1, 2, 3})
    events.push_back(mk_event(rng.uniform_u64(1000, 3000), "a:1", ObjKind::tx, hash_of(t)));
  events.push_back(mk_event(3500, "b:1", ObjKind::tx, hash_of(1)));  // duplicate announcement

  chain::ChainView cv(blocks);
  eventlog::Log log = eventlog::Log::from_events(events);
  auto rows = Classifier(cv, log, kWideWindow).classify_all();
  CHECK(rows.size() == 7);  // 4 block hashes + 3 tx hashes

  auto counts = class_counts(rows);
  size_t total = 0;
  for (const auto& [label, n] : counts) total += n;
  CHECK(total == 7);
  CHECK(counts["UNKNOWN"] == 1);
}

TEST_CASE("classifier matches the quadratic-scan oracle on random scenarios", "[classify]") {
  Rng rng(0x5eed3002);
  for (int trial = 0; trial < 30; ++trial) {
    // random linear chain with forks and invalid blocks
    std::vector<chain::BlockRecord> blocks;
    unsigned next_tx = 1000;
    uint64_t t = 1000;
    unsigned heights = 3 + static_cast<unsigned>(rng.uniform_index(8));
    for (unsigned h = 0; h < heights; ++h) {
      std::vector<chain::TxRecord> txs{mk_tx(next_tx++, 50, 0, false, true)};
      for (size_t k = rng.uniform_index(4); k-- > 0;)
        txs.push_back(mk_tx(next_tx++, rng.uniform_u64(1, 10'000), rng.uniform_u64(0, 50),
                            rng.bernoulli(0.1)));
      blocks.push_back(mk_block(100 + h, h, 100 + h - 1, t, std::move(txs)));
      if (rng.bernoulli(0.3))
        blocks.push_back(mk_block(500 + h, h, 100 + h - 1, t + 1, {}, true, false));
      if (rng.bernoulli(0.2))
        blocks.push_back(mk_block(700 + h, h, 100 + h - 1, t + 2, {}, false, false));
      t += rng.uniform_u64(500, 3000);
    }
    std::vector<chain::TxRecord> loose;
    for (int k = 0; k < 5; ++k)
      loose.push_back(mk_tx(next_tx++, rng.uniform_u64(1, 10'000)));

    // events: every block maybe announced, txs announced around block times,
    // plus unknown hashes
    std::vector<eventlog::InvEvent> events;
    for (const auto& b : blocks)
      if (rng.bernoulli(0.9))
        for (size_t rep = 1 + rng.uniform_index(3); rep-- > 0;)
          events.push_back(mk_event(b.time_ms + rng.uniform_u64(0, 2000),
                                    "p" + std::to_string(rng.uniform_index(5)) + ":1",
                                    ObjKind::block, b.hash));
    auto announce_tx = [&](const chain::TxRecord& tx) {
      if (!rng.bernoulli(0.85)) return;
      for (size_t rep = 1 + rng.uniform_index(3); rep-- > 0;)
        events.push_back(mk_event(rng.uniform_u64(500, t + 1000),
                                  "p" + std::to_string(rng.uniform_index(5)) + ":1", ObjKind::tx,
                                  tx.txid));
    };
    for (const auto& b : blocks)
      for (const auto& tx : b.txs) announce_tx(tx);
    for (const auto& tx : loose) announce_tx(tx);
    for (int k = 0; k < 3; ++k)
      events.push_back(mk_event(rng.uniform_u64(500, t), "p0:1", ObjKind::tx, hash_of(next_tx + k)));
    if (events.empty()) continue;

    ListeningWindow window{800, t - 500};
    chain::ChainView cv(blocks, loose);
    eventlog::Log log = eventlog::Log::from_events(events);
    auto rows = Classifier(cv, log, window).classify_all();
    auto expected = testing::oracle_classify_all(events, blocks, loose, window);

    REQUIRE(rows.size() == expected.size());
    for (const auto& row : rows) {
      auto it = expected.find({row.hash, row.kind});
      REQUIRE(it != expected.end());
      INFO("hash " << row.hash << " kind " << eventlog::kind_name(row.kind));
      REQUIRE(row.class_label == it->second);
    }
  }
}

TEST_CASE("MDLB count never exceeds observed in-window main blocks", "[classify]") {
  Rng rng(0x5eed3003);
  std::vector<chain::BlockRecord> blocks;
  std::vector<eventlog::InvEvent> events;
  uint64_t t = 1000;
  for (unsigned h = 0; h < 30; ++h) {
    blocks.push_back(mk_block(100 + h, h, 100 + h - 1, t));
    if (rng.bernoulli(0.8))
      events.push_back(mk_event(t + rng.uniform_u64(0, 100), "a:1", ObjKind::block, hash_of(100 + h)));
    t += 600;
  }
  ListeningWindow window{3000, 12'000};
  chain::ChainView cv(blocks);
  eventlog::Log log = eventlog::Log::from_events(events);
  Classifier cl(cv, log, window);

  size_t observed_in_window = 0;
  for (const auto& b : blocks) {
    auto fo = log.first_observation(b.hash, ObjKind::block);
    if (fo && window.contains(fo->first_ts_ms)) ++observed_in_window;
  }
  CHECK(cl.mdlb_hashes().size() <= observed_in_window);
}

TEST_CASE("classification csv round-trips", "[classify]") {
  chain::ChainView cv({mk_block(100, 0, 0, 1000, {mk_tx(1, 500)})});
  eventlog::Log log = eventlog::Log::from_events({
      mk_event(1000, "a:1", ObjKind::block, hash_of(100)),
      mk_event(900, "b:1", ObjKind::tx, hash_of(1)),
  });
  auto rows = Classifier(cv, log, kWideWindow).classify_all();
  auto path = blocksonar::testing::temp_file("classification", ".csv");
  write_classification_csv(path, rows);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "hash,kind,class,first_ts_ms,first_peer");

  CHECK(read_classification_csv(path) == rows);
  std::filesystem::remove(path);
}
