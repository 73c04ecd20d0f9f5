#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blocksonar/cli.hpp"
#include "helpers.hpp"
#include "scripted_peer.hpp"

using namespace blocksonar;
using testing::SimPeer;
using testing::dead_port;
using testing::eventually;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& stem) {
  static int counter = 0;
  auto dir = fs::temp_directory_path() / "blocksonar_tests" /
             (stem + "." + std::to_string(::getpid()) + "." + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  REQUIRE(f.good());
  f << content;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct CliRun {
  int rc;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int rc = cli::run_cli(args, out, err);
  return {rc, out.str(), err.str()};
}

std::string small_sim_config(uint64_t seed = 11, double tx_rate = 40) {
  std::ostringstream cfg;
  cfg << "rng_seed = " << seed << "\n"
      << "peer_count = 10\n"
      << "topology = random-regular\n"
      << "degree = 3\n"
      << "latency_model = constant\n"
      << "latency_ms = 20\n"
      << "block_interval_model = constant\n"
      << "block_interval_mean_ms = 400\n"
      << "tx_rate_per_s = " << tx_rate << "\n"
      << "miner_count = 2\n"
      << "duration_ms = 5000\n";
  return cfg.str();
}

nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(slurp(path)); }

// One simulate run shared by the read-only pipeline tests.
struct SimRunDir {
  std::string cfg_path, dir;
  SimRunDir() {
    cfg_path = blocksonar::testing::temp_file("cli_shared_cfg", ".cfg");
    write_file(cfg_path, small_sim_config());
    dir = fresh_dir("cli_shared_run");
    auto r = run({"simulate", "--config", cfg_path, "--out", dir});
    REQUIRE(r.rc == 0);
  }
  std::string log() const { return dir + "/events.csv"; }
  std::string ledger() const { return dir + "/ledger.jsonl"; }
};

const SimRunDir& shared_run() {
  static SimRunDir r;
  return r;
}

}  // namespace

TEST_CASE("help exits zero and lists every subcommand", "[cli]") {
  auto r = run({"--help"});
  CHECK(r.rc == 0);
  for (const char* sub : {"simulate", "monitor", "classify", "analyze", "report"})
    CHECK(r.out.find(sub) != std::string::npos);
}

TEST_CASE("an unknown subcommand is a usage error", "[cli]") {
  auto r = run({"frobnicate"});
  CHECK(r.rc != 0);
}

TEST_CASE("simulate writes artifacts and a manifest listing them", "[cli]") {
  const auto& sr = shared_run();
  for (const char* name : {"events.csv", "ledger.jsonl", "audit.csv", "manifest.json"})
    CHECK(fs::exists(fs::path(sr.dir) / name));

  auto lg = eventlog::Log::load(sr.log());
  CHECK(lg.events().size() > 100);
  auto cv = chain::ChainView::load(sr.ledger());

  auto m = read_json(sr.dir + "/manifest.json");
  CHECK(m["subcommand"] == "simulate");
  CHECK(m["config"] == sr.cfg_path);
  CHECK(m["rng_seed"] == 11);
  CHECK(m["tool_version"] == cli::kToolVersion);
  CHECK(m["interrupted"] == false);
  CHECK(m["started_ms"].get<uint64_t>() <= m["finished_ms"].get<uint64_t>());
  for (const auto& name : m["outputs"])
    CHECK(fs::exists(fs::path(sr.dir) / name.get<std::string>()));
  CHECK(m["outputs"].size() == 3);
}

TEST_CASE("simulate is deterministic per seed and diverges across seeds", "[cli]") {
  const auto& sr = shared_run();
  std::string again = fresh_dir("cli_again");
  REQUIRE(run({"simulate", "--config", sr.cfg_path, "--out", again}).rc == 0);
  CHECK(slurp(sr.ledger()) == slurp(again + "/ledger.jsonl"));
  CHECK(slurp(sr.log()) == slurp(again + "/events.csv"));
  CHECK(slurp(sr.dir + "/audit.csv") == slurp(again + "/audit.csv"));

  std::string other = fresh_dir("cli_seed12");
  REQUIRE(run({"simulate", "--config", sr.cfg_path, "--out", other, "--seed", "12"}).rc == 0);
  CHECK(slurp(sr.ledger()) != slurp(other + "/ledger.jsonl"));
  auto m = read_json(other + "/manifest.json");
  CHECK(m["rng_seed"] == 12);

  std::string other2 = fresh_dir("cli_seed12b");
  REQUIRE(run({"simulate", "--config", sr.cfg_path, "--out", other2, "--seed", "12"}).rc == 0);
  CHECK(slurp(other + "/ledger.jsonl") == slurp(other2 + "/ledger.jsonl"));
}

TEST_CASE("simulate rejects a malformed config without writing a manifest", "[cli]") {
  std::string cfg = blocksonar::testing::temp_file("cli_bad_cfg", ".cfg");
  write_file(cfg, "peer_count = 10\nwarp_factor = 9\n");
  std::string out = fresh_dir("cli_bad_run");
  auto r = run({"simulate", "--config", cfg, "--out", out});
  CHECK(r.rc != 0);
  CHECK(r.err.find("ConfigInvalid") != std::string::npos);
  CHECK(r.err.find("warp_factor") != std::string::npos);
  CHECK(!fs::exists(fs::path(out) / "manifest.json"));
}

TEST_CASE("the output directory falls back to the environment", "[cli]") {
  const auto& sr = shared_run();
  SECTION("BLOCKSONAR_OUT supplies the default") {
    std::string dir = fresh_dir("cli_envout");
    ::setenv("BLOCKSONAR_OUT", dir.c_str(), 1);
    auto r = run({"simulate", "--config", sr.cfg_path});
    ::unsetenv("BLOCKSONAR_OUT");
    CHECK(r.rc == 0);
    CHECK(fs::exists(fs::path(dir) / "ledger.jsonl"));
  }
  SECTION("no --out and no env is ConfigInvalid") {
    ::unsetenv("BLOCKSONAR_OUT");
    auto r = run({"simulate", "--config", sr.cfg_path});
    CHECK(r.rc != 0);
    CHECK(r.err.find("ConfigInvalid") != std::string::npos);
  }
}

TEST_CASE("classify emits one row per observed hash and prints counts", "[cli]") {
  const auto& sr = shared_run();
  std::string out = fresh_dir("cli_classify");
  auto r = run({"classify", "--log", sr.log(), "--ledger", sr.ledger(), "--out", out});
  REQUIRE(r.rc == 0);

  auto rows = classify::read_classification_csv(out + "/classification.csv");
  auto lg = eventlog::Log::load(sr.log());
  std::set<std::string> hashes;
  for (const auto& e : lg.events()) hashes.insert(e.hash);
  CHECK(rows.size() == hashes.size());

  for (const auto& [label, n] : classify::class_counts(rows)) {
    CHECK(r.out.find(label + " " + std::to_string(n)) != std::string::npos);
  }
  auto m = read_json(out + "/manifest.json");
  CHECK(m["outputs"] == nlohmann::json::array({"classification.csv"}));
}

TEST_CASE("classify of an empty log yields a header-only csv", "[cli]") {
  std::string log = blocksonar::testing::temp_file("cli_empty_log", ".csv");
  { eventlog::Writer w(log); }
  std::string ledger = blocksonar::testing::temp_file("cli_tiny_ledger", ".jsonl");
  chain::write_ledger(ledger, {blocksonar::testing::mk_block(1, 0, 0, 0)}, {});
  std::string out = fresh_dir("cli_classify_empty");
  auto r = run({"classify", "--log", log, "--ledger", ledger, "--out", out});
  REQUIRE(r.rc == 0);
  CHECK(r.out.find("classified 0 hashes") != std::string::npos);
  CHECK(slurp(out + "/classification.csv") == std::string(classify::kClassificationCsvHeader) + "\n");
}

TEST_CASE("a window beyond the log turns every block into an EB", "[cli]") {
  const auto& sr = shared_run();
  std::string out = fresh_dir("cli_classify_outside");
  auto r = run({"classify", "--log", sr.log(), "--ledger", sr.ledger(), "--out", out,
                "--window-start-ms", "900000000", "--window-end-ms", "900000001"});
  REQUIRE(r.rc == 0);
  auto rows = classify::read_classification_csv(out + "/classification.csv");
  size_t blocks = 0;
  for (const auto& row : rows)
    if (row.kind == eventlog::ObjKind::block) {
      ++blocks;
      CHECK(row.class_label == "EB");
    }
  CHECK(blocks > 0);
}

TEST_CASE("analyze writes every figure for a healthy run", "[cli]") {
  const auto& sr = shared_run();
  std::string out = fresh_dir("cli_analyze");
  auto r = run({"analyze", "--log", sr.log(), "--ledger", sr.ledger(), "--out", out});
  REQUIRE(r.rc == 0);

  for (const char* name : cli::kFigureFiles) CHECK(fs::exists(fs::path(out) / name));
  auto s = read_json(out + "/summary.json");
  for (const char* name : cli::kFigureFiles) CHECK(s["figures"][name] == "written");

  uint64_t total = s["analysis_set"]["total"];
  uint64_t included = s["analysis_set"]["included"];
  uint64_t censored = s["analysis_set"]["censored"];
  CHECK(total == included + censored);
  CHECK(included > 100);

  // Constant 400 ms blocks over a diameter-bounded graph: every inclusion
  // lands within a couple of seconds, so the 1 h mark has seen them all.
  double max_delay = s["inclusion"]["max_delay_seconds"];
  CHECK(max_delay < 5.0);
  double frac_1h = s["inclusion"]["count_fraction_at"]["1h"];
  CHECK(frac_1h == Catch::Approx(static_cast<double>(included) / total).epsilon(1e-12));

  // The classifier counts embedded in the summary match a direct classify run.
  std::string cls = fresh_dir("cli_analyze_cls");
  REQUIRE(run({"classify", "--log", sr.log(), "--ledger", sr.ledger(), "--out", cls}).rc == 0);
  auto rows = classify::read_classification_csv(cls + "/classification.csv");
  for (const auto& [label, n] : classify::class_counts(rows)) CHECK(s["class_counts"][label] == n);

  auto ref = s["live_2016_reference"];
  CHECK(ref["testable_against_live_network"] == false);
  CHECK(ref["delta_seconds"] == 2800.0);
  CHECK(ref["delta_blocks"] == 4.1);
  CHECK(ref["block_interval_mean_s"] == 550.05);
  CHECK(ref["block_interval_median_s"] == 383.25);
  CHECK(ref["block_interval_min_s"] == -5.48);
  CHECK(ref["not_included_count_at_1h"] == 0.43);
  CHECK(ref["not_included_count_at_30d"] == 0.20);
  CHECK(ref["included_value_at_3h"] == 0.93);
  CHECK(ref["included_value_at_30d"] == 0.999);

  auto m = read_json(out + "/manifest.json");
  CHECK(m["outputs"].size() == std::size(cli::kFigureFiles) + 1);

  // The cumulative curve ends fully included: everything confirms within the
  // horizon in this run.
  std::string cum = slurp(out + "/cumulative_count.csv");
  auto last_nl = cum.find_last_of('\n', cum.size() - 2);
  std::string last_line = cum.substr(last_nl + 1);
  CHECK(last_line.substr(last_line.find(',') + 1) ==
        cli::detail::num(static_cast<double>(included) / total) + "\n");
}

TEST_CASE("analyze cross-checks a supplied classification file", "[cli]") {
  const auto& sr = shared_run();
  std::string cls = fresh_dir("cli_xcheck_cls");
  REQUIRE(run({"classify", "--log", sr.log(), "--ledger", sr.ledger(), "--out", cls}).rc == 0);
  std::string csv = cls + "/classification.csv";

  std::string out = fresh_dir("cli_xcheck_ok");
  auto ok = run({"analyze", "--log", sr.log(), "--ledger", sr.ledger(), "--out", out,
                 "--classification", csv});
  CHECK(ok.rc == 0);
  auto m = read_json(out + "/manifest.json");
  bool listed = false;
  for (const auto& in : m["inputs"]) listed |= in.get<std::string>() == csv;
  CHECK(listed);

  // Flip one transaction's label to a different valid class.
  std::string text = slurp(csv);
  auto pos = text.find(",tx,BT,");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 7, ",tx,ET,");
  std::string tampered = blocksonar::testing::temp_file("cli_tampered", ".csv");
  write_file(tampered, text);

  std::string out2 = fresh_dir("cli_xcheck_bad");
  auto bad = run({"analyze", "--log", sr.log(), "--ledger", sr.ledger(), "--out", out2,
                  "--classification", tampered});
  CHECK(bad.rc != 0);
  CHECK(bad.err.find("ParseError") != std::string::npos);
  CHECK(bad.err.find("disagrees") != std::string::npos);
}

TEST_CASE("analyze without transactions skips the delay figures and succeeds", "[cli]") {
  std::string cfg = blocksonar::testing::temp_file("cli_notx_cfg", ".cfg");
  write_file(cfg, small_sim_config(21, 0.0));
  std::string sim = fresh_dir("cli_notx_sim");
  REQUIRE(run({"simulate", "--config", cfg, "--out", sim}).rc == 0);

  std::string out = fresh_dir("cli_notx_ana");
  auto r = run({"analyze", "--log", sim + "/events.csv", "--ledger", sim + "/ledger.jsonl",
                "--out", out});
  REQUIRE(r.rc == 0);
  auto s = read_json(out + "/summary.json");
  CHECK(s["analysis_set"]["total"] == 0);
  CHECK(s["inclusion"].contains("skipped"));
  for (const char* name : {"delay_hist_seconds.csv", "delay_hist_blocks.csv",
                           "cumulative_count.csv", "cumulative_value.csv"}) {
    CHECK(!fs::exists(fs::path(out) / name));
    CHECK(s["figures"][name].get<std::string>().find("skipped") == 0);
  }
  CHECK(fs::exists(fs::path(out) / "propagation_curves.csv"));
  CHECK(fs::exists(fs::path(out) / "manifest.json"));
}

TEST_CASE("report renders deterministically and requires its inputs", "[cli]") {
  const auto& sr = shared_run();
  std::string out = fresh_dir("cli_report");
  REQUIRE(run({"analyze", "--log", sr.log(), "--ledger", sr.ledger(), "--out", out}).rc == 0);

  auto first = run({"report", "--out", out});
  REQUIRE(first.rc == 0);
  std::string text = slurp(out + "/report.txt");
  CHECK(text.find("blocksonar analysis report") != std::string::npos);
  CHECK(text.find("block intervals") != std::string::npos);
  CHECK(text.find("reference magnitudes") != std::string::npos);
  CHECK(first.out == text);
  CHECK(fs::exists(fs::path(out) / "plots" / "cumulative.gp"));

  REQUIRE(run({"report", "--out", out}).rc == 0);
  CHECK(slurp(out + "/report.txt") == text);

  fs::remove(fs::path(out) / "cumulative_value.csv");
  auto broken = run({"report", "--out", out});
  CHECK(broken.rc != 0);
  CHECK(broken.err.find("MissingInputs") != std::string::npos);
  CHECK(broken.err.find("cumulative_value.csv") != std::string::npos);
}

TEST_CASE("report without a summary names it as the missing input", "[cli]") {
  std::string out = fresh_dir("cli_report_empty");
  auto r = run({"report", "--out", out});
  CHECK(r.rc != 0);
  CHECK(r.err.find("MissingInputs") != std::string::npos);
  CHECK(r.err.find("summary.json") != std::string::npos);
}

TEST_CASE("monitor without seeds fails with NoSeeds", "[cli]") {
  std::string cfg = blocksonar::testing::temp_file("cli_mon_noseed", ".cfg");
  write_file(cfg, "seeds =\nduration_ms = 1000\n");
  auto r = run({"monitor", "--config", cfg, "--out", fresh_dir("cli_mon_noseed")});
  CHECK(r.rc != 0);
  CHECK(r.err.find("NoSeeds") != std::string::npos);
}

TEST_CASE("monitor over unreachable seeds exits NoSeeds after the run", "[cli]") {
  std::string cfg = blocksonar::testing::temp_file("cli_mon_dead", ".cfg");
  write_file(cfg, "seeds = 127.0.0.1:" + std::to_string(dead_port()) +
                      "\nduration_ms = 400\nbackoff_base_ms = 100\nbackoff_cap_ms = "
                      "200\nhandshake_timeout_ms = 200\n");
  std::string out = fresh_dir("cli_mon_dead");
  auto r = run({"monitor", "--config", cfg, "--out", out});
  CHECK(r.rc != 0);
  CHECK(r.err.find("NoSeeds") != std::string::npos);
  CHECK(fs::exists(fs::path(out) / "events.csv"));        // log closed cleanly
  CHECK(!fs::exists(fs::path(out) / "manifest.json"));    // fatal: no manifest
}

TEST_CASE("monitor records what scripted peers announce, matching the schedule", "[cli]") {
  // Ground truth comes from an in-process simulator run: each scripted peer
  // replays one simulated peer's announcement sequence over real sockets.
  sim::SimConfig sc;
  sc.rng_seed = 5;
  sc.peer_count = 6;
  sc.degree = 3;
  sc.latency_ms = 10;
  sc.block_interval_mean_ms = 300;
  sc.block_interval_model = "constant";
  sc.tx_rate_per_s = 10;
  sc.miner_count = 2;
  sc.duration_ms = 1500;
  sim::RunResult rr = sim::run(sc);

  std::map<std::string, std::vector<std::pair<eventlog::ObjKind, std::string>>> schedule;
  for (const auto& e : rr.events) schedule[e.peer].push_back({e.kind, e.hash});
  REQUIRE(schedule.size() >= 2);

  auto to_script = [](const std::vector<std::pair<eventlog::ObjKind, std::string>>& seq) {
    std::vector<wire::InvVector> msg;
    for (const auto& [kind, hash] : seq) {
      wire::InvVector v;
      v.object_kind = kind == eventlog::ObjKind::tx ? wire::kInvTx : wire::kInvBlock;
      auto bytes = from_hex(hash);
      std::copy(bytes.begin(), bytes.end(), v.hash.begin());
      msg.push_back(v);
    }
    return msg;
  };
  auto it = schedule.begin();
  SimPeer a, b;
  auto seq_a = it++->second;
  auto seq_b = it->second;
  a.inv_script = {to_script(seq_a)};
  b.inv_script = {to_script(seq_b)};
  a.start();
  b.start();

  std::string cfg = blocksonar::testing::temp_file("cli_mon_script", ".cfg");
  write_file(cfg, "seeds = " + a.address() + ", " + b.address() + "\nduration_ms = 900\n");
  std::string out = fresh_dir("cli_mon_script");
  uint64_t before = testing::wall_now();
  auto r = run({"monitor", "--config", cfg, "--out", out});
  uint64_t after = testing::wall_now();
  REQUIRE(r.rc == 0);

  auto lg = eventlog::Log::load(out + "/events.csv");
  std::map<std::string, std::vector<std::pair<eventlog::ObjKind, std::string>>> got;
  for (const auto& e : lg.events()) {
    got[e.peer].push_back({e.kind, e.hash});
    CHECK(e.ts_ms >= before);
    CHECK(e.ts_ms <= after);
  }
  // The loaded log orders same-millisecond events by hash, so compare the
  // per-peer observation multisets rather than arrival order.
  auto as_multiset = [](std::vector<std::pair<eventlog::ObjKind, std::string>> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  CHECK(as_multiset(got[a.address()]) == as_multiset(seq_a));
  CHECK(as_multiset(got[b.address()]) == as_multiset(seq_b));

  auto m = read_json(out + "/manifest.json");
  CHECK(m["subcommand"] == "monitor");
  CHECK(m["interrupted"] == false);
  a.stop();
  b.stop();
  for (const auto& cmd : a.seen_commands()) CHECK(cmd != "getdata");
}

TEST_CASE("an interrupted monitor closes the log and marks the manifest", "[cli][binary]") {
  REQUIRE(fs::exists(BLOCKSONAR_BIN));
  SimPeer peer;
  peer.inv_script = {{testing::mk_inv(wire::kInvTx, 'f')}};
  peer.start();

  std::string cfg = blocksonar::testing::temp_file("cli_mon_intr", ".cfg");
  write_file(cfg, "seeds = " + peer.address() + "\nduration_ms = 30000\n");
  std::string out = fresh_dir("cli_mon_intr");
  std::string sh = std::string(BLOCKSONAR_BIN) + " monitor --config " + cfg + " --out " + out +
                   " >/dev/null 2>&1 & pid=$!; sleep 0.6; kill -INT $pid; wait $pid";
  int status = std::system(("/bin/sh -c '" + sh + "'").c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);

  auto m = read_json(out + "/manifest.json");
  CHECK(m["interrupted"] == true);
  auto lg = eventlog::Log::load(out + "/events.csv");
  bool saw = false;
  for (const auto& e : lg.events()) saw |= e.peer == peer.address();
  CHECK(saw);
}
