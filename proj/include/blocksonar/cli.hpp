#pragma once
// Command-line pipelines: simulate, monitor, classify, analyze, report.
// Each subcommand writes its artifacts plus a manifest.json into the output
// directory; exit status is 0 iff the manifest landed without a fatal error.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "blocksonar/analytics.hpp"
#include "blocksonar/crawler.hpp"
#include "blocksonar/sim.hpp"

namespace blocksonar::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Figure files cmd_analyze emits, in emission order. cmd_report requires each
// one unless analyze noted it as skipped in summary.json.
inline constexpr const char* kFigureFiles[] = {
    "propagation_curves.csv", "delay_hist_seconds.csv", "delay_hist_blocks.csv",
    "cumulative_count.csv",   "cumulative_value.csv",   "value_vs_delay.csv",
    "fee_vs_delay.csv",       "tx_per_block.csv"};

class CliError : public std::runtime_error {
 public:
  enum Kind { ConfigInvalid, IoFailure, MissingInputs, ParseError };
  CliError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

inline const char* kind_label(CliError::Kind k) {
  switch (k) {
    case CliError::ConfigInvalid: return "ConfigInvalid";
    case CliError::IoFailure: return "IoFailure";
    case CliError::MissingInputs: return "MissingInputs";
    case CliError::ParseError: return "ParseError";
  }
  return "Error";
}

namespace detail {

inline uint64_t wall_ms() {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::system_clock::now().time_since_epoch())
                                   .count());
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline uint64_t parse_u64(const std::string& v, const std::string& key, int line) {
  try {
    size_t pos = 0;
    unsigned long long r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing junk");
    return r;
  } catch (const std::exception&) {
    throw CliError(CliError::ConfigInvalid,
                   "line " + std::to_string(line) + ": bad number for " + key + ": '" + v + "'");
  }
}

inline std::string num(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.10g", v);
  return b;
}

inline std::string num6(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.6g", v);
  return b;
}

inline std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> f{false};
  return f;
}

inline void on_interrupt(int) { interrupt_flag().store(true); }

// Installs SIGINT and SIGTERM handlers for the lifetime of a monitor run.
struct SignalGuard {
  using Handler = void (*)(int);
  Handler old_int, old_term;
  SignalGuard() {
    interrupt_flag().store(false);
    old_int = std::signal(SIGINT, on_interrupt);
    old_term = std::signal(SIGTERM, on_interrupt);
  }
  ~SignalGuard() {
    std::signal(SIGINT, old_int);
    std::signal(SIGTERM, old_term);
  }
};

}  // namespace detail

struct RunManifest {
  std::string subcommand;
  std::string config_path;  // empty when the subcommand takes no config file
  std::vector<std::string> inputs;
  std::string output_dir;
  std::vector<std::string> outputs;  // relative to output_dir
  std::optional<uint64_t> rng_seed;
  uint64_t started_ms = 0;
  uint64_t finished_ms = 0;
  bool interrupted = false;
};

// Every listed output must already exist; the manifest lands via tmp + rename
// so readers never see a half-written file.
inline void write_manifest(const RunManifest& m) {
  namespace fs = std::filesystem;
  for (const auto& name : m.outputs)
    if (!fs::exists(fs::path(m.output_dir) / name))
      throw CliError(CliError::IoFailure, "manifest lists missing output: " + name);
  nlohmann::ordered_json j;
  j["subcommand"] = m.subcommand;
  if (m.config_path.empty())
    j["config"] = nullptr;
  else
    j["config"] = m.config_path;
  j["inputs"] = m.inputs;
  j["output_dir"] = m.output_dir;
  j["tool_version"] = kToolVersion;
  if (m.rng_seed)
    j["rng_seed"] = *m.rng_seed;
  else
    j["rng_seed"] = nullptr;
  j["started_ms"] = m.started_ms;
  j["finished_ms"] = m.finished_ms;
  j["interrupted"] = m.interrupted;
  j["outputs"] = m.outputs;
  fs::path tmp = fs::path(m.output_dir) / "manifest.json.tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw CliError(CliError::IoFailure, "cannot write " + tmp.string());
    f << j.dump(2) << "\n";
  }
  fs::rename(tmp, fs::path(m.output_dir) / "manifest.json");
}

inline std::string resolve_out(const std::string& flag) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("BLOCKSONAR_OUT");
  if (env && *env) return env;
  throw CliError(CliError::ConfigInvalid, "no output directory: pass --out or set BLOCKSONAR_OUT");
}

// ---------------------------------------------------------------- simulate

struct SimulateOpts {
  std::string config, out;
  std::optional<uint64_t> seed;
};

inline int cmd_simulate(const SimulateOpts& o, std::ostream& out) {
  namespace fs = std::filesystem;
  RunManifest m;
  m.subcommand = "simulate";
  m.config_path = o.config;
  m.inputs = {o.config};
  m.output_dir = o.out;
  m.started_ms = detail::wall_ms();

  sim::SimConfig cfg = sim::SimConfig::parse_file(o.config);
  if (o.seed) {
    cfg.rng_seed = *o.seed;
    cfg.validate();
  }
  m.rng_seed = cfg.rng_seed;
  fs::create_directories(o.out);
  sim::RunResult r =
      cfg.monitor_mode == "loopback-sockets" ? sim::run_loopback(cfg) : sim::run(cfg);
  auto p = [&](const char* n) { return (fs::path(o.out) / n).string(); };
  sim::write_outputs(r, p("events.csv"), p("ledger.jsonl"), p("audit.csv"));

  out << "simulated " << cfg.duration_ms << " ms: " << r.topo.n << " peers, " << r.blocks.size()
      << " blocks, " << r.generated_valid << " valid txs (" << r.included << " included, "
      << r.in_mempool << " mempool, " << r.policy_skipped << " skipped), " << r.generated_invalid
      << " invalid, " << r.events.size() << " monitor events\n";

  m.outputs = {"events.csv", "ledger.jsonl", "audit.csv"};
  m.finished_ms = detail::wall_ms();
  write_manifest(m);
  return 0;
}

// ----------------------------------------------------------------- monitor

struct MonitorOpts {
  std::string config, out;
};

struct MonitorConfig {
  crawl::CrawlerConfig crawler;
  uint64_t duration_ms = 60'000;
};

inline MonitorConfig parse_monitor_config(std::istream& in) {
  MonitorConfig mc;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw = raw.substr(0, hash);
    std::string s = detail::trim(raw);
    if (s.empty()) continue;
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw CliError(CliError::ConfigInvalid,
                     "line " + std::to_string(line) + ": expected key = value");
    std::string k = detail::trim(s.substr(0, eq));
    std::string v = detail::trim(s.substr(eq + 1));
    if (k == "seeds") {
      mc.crawler.seeds.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) mc.crawler.seeds.push_back(item);
      }
    } else if (k == "duration_ms") {
      mc.duration_ms = detail::parse_u64(v, k, line);
    } else if (k == "max_connections") {
      mc.crawler.max_connections = detail::parse_u64(v, k, line);
    } else if (k == "handshake_timeout_ms") {
      mc.crawler.handshake_timeout_ms = detail::parse_u64(v, k, line);
    } else if (k == "backoff_base_ms") {
      mc.crawler.backoff_base_ms = detail::parse_u64(v, k, line);
    } else if (k == "backoff_cap_ms") {
      mc.crawler.backoff_cap_ms = detail::parse_u64(v, k, line);
    } else if (k == "getaddr_interval_ms") {
      mc.crawler.getaddr_interval_ms = detail::parse_u64(v, k, line);
    } else if (k == "ban_after_failures") {
      mc.crawler.ban_after_failures = static_cast<uint32_t>(detail::parse_u64(v, k, line));
    } else if (k == "self_address") {
      mc.crawler.self_address = v;
    } else if (k == "user_agent") {
      mc.crawler.version.user_agent = v;
    } else if (k == "magic") {
      try {
        mc.crawler.magic = static_cast<uint32_t>(std::stoul(v, nullptr, 16));
      } catch (const std::exception&) {
        throw CliError(CliError::ConfigInvalid,
                       "line " + std::to_string(line) + ": bad hex magic '" + v + "'");
      }
    } else {
      throw CliError(CliError::ConfigInvalid,
                     "line " + std::to_string(line) + ": unknown key '" + k + "'");
    }
  }
  if (mc.duration_ms == 0)
    throw CliError(CliError::ConfigInvalid, "duration_ms must be positive");
  if (mc.crawler.max_connections == 0)
    throw CliError(CliError::ConfigInvalid, "max_connections must be at least 1");
  return mc;
}

inline MonitorConfig parse_monitor_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CliError(CliError::IoFailure, "cannot open config: " + path);
  return parse_monitor_config(f);
}

inline int cmd_monitor(const MonitorOpts& o, std::ostream& out) {
  namespace fs = std::filesystem;
  RunManifest m;
  m.subcommand = "monitor";
  m.config_path = o.config;
  m.inputs = {o.config};
  m.output_dir = o.out;
  m.started_ms = detail::wall_ms();

  MonitorConfig mc = parse_monitor_config_file(o.config);
  fs::create_directories(o.out);
  std::optional<eventlog::Writer> writer;
  writer.emplace((fs::path(o.out) / "events.csv").string());
  size_t n_events = 0;
  // The crawler serializes sink calls, so plain writer access is safe here.
  crawl::EventSink sink = [&](const eventlog::InvEvent& e) {
    writer->append(e);
    ++n_events;
  };

  detail::SignalGuard sig;
  bool established_ever = false;
  size_t peak = 0, dir_size = 0;
  {
    auto crawler = crawl::bootstrap(mc.crawler, sink);
    uint64_t t0 = steady_ms();
    while (steady_ms() - t0 < mc.duration_ms && !detail::interrupt_flag().load()) {
      size_t e = crawler->established_count();
      peak = std::max(peak, e);
      established_ever |= e > 0;
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
    size_t e = crawler->established_count();
    peak = std::max(peak, e);
    established_ever |= e > 0;
    dir_size = crawler->directory().size();
    crawler->stop();
  }
  writer->flush();
  writer.reset();  // log closed before anything can still fail

  m.interrupted = detail::interrupt_flag().load();
  if (!m.interrupted && !established_ever && n_events == 0)
    throw crawl::CrawlError(crawl::CrawlError::NoSeeds,
                            "no configured seed became reachable within the run");

  out << "monitored: directory " << dir_size << " peers, peak established " << peak << ", "
      << n_events << " events" << (m.interrupted ? " (interrupted)" : "") << "\n";
  m.outputs = {"events.csv"};
  m.finished_ms = detail::wall_ms();
  write_manifest(m);
  return 0;
}

// ---------------------------------------------------------------- classify

struct ClassifyOpts {
  std::string log, ledger, out;
  std::optional<uint64_t> window_start_ms, window_end_ms;
};

inline classify::ListeningWindow pick_window(const eventlog::Log& lg,
                                             std::optional<uint64_t> start,
                                             std::optional<uint64_t> end) {
  uint64_t a = 0, b = 1;
  if (!lg.events().empty()) {
    a = lg.events().front().ts_ms;
    b = lg.events().back().ts_ms + 1;
  }
  if (start) a = *start;
  if (end) b = *end;
  return {a, b};
}

inline int cmd_classify(const ClassifyOpts& o, std::ostream& out) {
  namespace fs = std::filesystem;
  RunManifest m;
  m.subcommand = "classify";
  m.inputs = {o.log, o.ledger};
  m.output_dir = o.out;
  m.started_ms = detail::wall_ms();

  eventlog::Log lg = eventlog::Log::load(o.log);
  chain::ChainView cv = chain::ChainView::load(o.ledger);
  cv.attach_observations(lg);
  classify::ListeningWindow w = pick_window(lg, o.window_start_ms, o.window_end_ms);
  classify::Classifier cls(cv, lg, w);
  auto rows = cls.classify_all();
  fs::create_directories(o.out);
  classify::write_classification_csv((fs::path(o.out) / "classification.csv").string(), rows);

  out << "classified " << rows.size() << " hashes over window [" << w.start_ms << ", " << w.end_ms
      << ")\n";
  for (const auto& [label, n] : classify::class_counts(rows)) out << "  " << label << " " << n << "\n";

  m.outputs = {"classification.csv"};
  m.finished_ms = detail::wall_ms();
  write_manifest(m);
  return 0;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeOpts {
  std::string log, ledger, out, classification;
  std::optional<uint64_t> window_start_ms, window_end_ms;
  uint64_t horizon_ms = 2'592'000'000;  // 30 days
};

inline int cmd_analyze(const AnalyzeOpts& o, std::ostream& out) {
  namespace fs = std::filesystem;
  RunManifest m;
  m.subcommand = "analyze";
  m.inputs = {o.log, o.ledger};
  m.output_dir = o.out;
  m.started_ms = detail::wall_ms();

  eventlog::Log lg = eventlog::Log::load(o.log);
  chain::ChainView cv = chain::ChainView::load(o.ledger);
  classify::ListeningWindow w = pick_window(lg, o.window_start_ms, o.window_end_ms);
  analytics::Analytics an(cv, lg, w);
  auto rows = an.classifier().classify_all();

  if (!o.classification.empty()) {
    auto given = classify::read_classification_csv(o.classification);
    std::map<std::string, std::string> theirs, mine;
    for (const auto& r : given) theirs[r.hash] = r.class_label;
    for (const auto& r : rows) mine[r.hash] = r.class_label;
    if (theirs != mine) {
      std::string detail = "classification file disagrees with recomputation";
      for (const auto& [hash, label] : mine) {
        auto it = theirs.find(hash);
        if (it == theirs.end() || it->second != label) {
          detail += " at hash " + hash + " (file says " +
                    (it == theirs.end() ? std::string("nothing") : it->second) + ", computed " +
                    label + ")";
          break;
        }
      }
      throw CliError(CliError::ParseError, detail);
    }
    m.inputs.push_back(o.classification);
  }

  fs::create_directories(o.out);
  auto path_of = [&](const char* n) { return (fs::path(o.out) / n).string(); };
  auto figures = nlohmann::ordered_json::object();
  std::vector<std::string> written;
  auto emit = [&](const char* name, auto&& fn) {
    try {
      fn(path_of(name));
      figures[name] = "written";
      written.push_back(name);
    } catch (const analytics::AnalyticsError& e) {
      figures[name] = std::string("skipped: ") + e.what();
    }
  };
  auto open_csv = [](const std::string& path, const char* header) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw CliError(CliError::IoFailure, "cannot write " + path);
    f << header << "\n";
    return f;
  };
  using detail::num;

  emit("propagation_curves.csv", [&](const std::string& p) {
    auto prop = an.propagation_analysis();
    auto f = open_csv(p, "t_s,mean_reach,p10_reach,p90_reach");
    for (size_t i = 0; i < prop.grid_s.size(); ++i)
      f << num(prop.grid_s[i]) << "," << num(prop.mean[i]) << "," << num(prop.p10[i]) << ","
        << num(prop.p90[i]) << "\n";
  });

  // Bin widths adapt to the observed delay range so short simulated runs and
  // long logs both land in a few dozen informative bins.
  std::optional<analytics::DelayHistogram> hist_s, hist_b;
  emit("delay_hist_seconds.csv", [&](const std::string& p) {
    auto delays = an.delays_seconds();
    if (delays.empty())
      throw analytics::AnalyticsError(analytics::AnalyticsError::EmptySet, "no included txs");
    double mx = *std::max_element(delays.begin(), delays.end());
    double width = std::max(mx / 50.0, 1e-3);
    hist_s = an.histogram_seconds(width, mx + width);
    auto f = open_csv(p, "bin_lower_s,count");
    for (const auto& [edge, n] : hist_s->bins) f << num(edge) << "," << n << "\n";
  });
  emit("delay_hist_blocks.csv", [&](const std::string& p) {
    auto delays = an.delays_blocks();
    if (delays.empty())
      throw analytics::AnalyticsError(analytics::AnalyticsError::EmptySet, "no included txs");
    double mx = *std::max_element(delays.begin(), delays.end());
    hist_b = an.histogram_blocks(1.0, mx + 1.0);
    auto f = open_csv(p, "bin_lower_blocks,count");
    for (const auto& [edge, n] : hist_b->bins) f << num(edge) << "," << n << "\n";
  });

  double horizon_s = static_cast<double>(o.horizon_ms) / 1000.0;
  std::optional<analytics::CumulativeInclusion> cum;
  emit("cumulative_count.csv", [&](const std::string& p) {
    cum = an.cumulative_inclusion(horizon_s);
    auto f = open_csv(p, "t_s,fraction_included");
    for (size_t i = 0; i < cum->grid_s.size(); ++i)
      f << num(cum->grid_s[i]) << "," << num(cum->fraction_by_count[i]) << "\n";
  });
  emit("cumulative_value.csv", [&](const std::string& p) {
    if (!cum) throw analytics::AnalyticsError(analytics::AnalyticsError::EmptySet,
                                              "no cumulative data");
    auto f = open_csv(p, "t_s,fraction_included");
    for (size_t i = 0; i < cum->grid_s.size(); ++i)
      f << num(cum->grid_s[i]) << "," << num(cum->fraction_by_value[i]) << "\n";
  });

  emit("value_vs_delay.csv", [&](const std::string& p) {
    auto f = open_csv(p, "delay_blocks,mean_value_sats,tx_count");
    for (const auto& [d, mean, n] : an.value_vs_delay()) f << d << "," << num(mean) << "," << n << "\n";
  });
  emit("fee_vs_delay.csv", [&](const std::string& p) {
    auto f = open_csv(p, "delay_blocks,mean_fee_sats,tx_count");
    for (const auto& [d, mean, n] : an.fee_vs_delay()) f << d << "," << num(mean) << "," << n << "\n";
  });
  emit("tx_per_block.csv", [&](const std::string& p) {
    auto cmp = an.tx_per_block_comparison();
    auto f = open_csv(p, "hash,height,observed_tx,included_tx");
    for (const auto& c : cmp)
      f << c.hash << "," << c.height << "," << c.observed_tx << "," << c.included_tx << "\n";
  });

  nlohmann::ordered_json summary;
  summary["window"] = {{"start_ms", w.start_ms}, {"end_ms", w.end_ms}};
  summary["horizon_ms"] = o.horizon_ms;
  summary["analysis_set"] = {{"total", an.analysis_set().size()},
                             {"included", an.included_count()},
                             {"censored", an.censored_count()},
                             {"mdlb_count", an.mdlb_hashes().size()}};

  try {
    auto marks = nlohmann::ordered_json::object();
    auto not_marks = nlohmann::ordered_json::object();
    auto value_marks = nlohmann::ordered_json::object();
    const std::pair<const char*, double> kMarks[] = {{"1h", 3600.0}, {"3h", 10800.0},
                                                     {"30d", 2'592'000.0}};
    for (const auto& [label, t_s] : kMarks) {
      double fc = an.fraction_included_at(t_s);
      marks[label] = fc;
      not_marks[label] = 1.0 - fc;
      value_marks[label] = an.value_fraction_included_at(t_s);
    }
    auto delays = an.delays_seconds();
    summary["inclusion"] = {{"count_fraction_at", marks},
                            {"not_included_at", not_marks},
                            {"value_fraction_at", value_marks},
                            {"max_delay_seconds",
                             delays.empty() ? 0.0 : *std::max_element(delays.begin(), delays.end())}};
  } catch (const analytics::AnalyticsError& e) {
    summary["inclusion"] = {{"skipped", e.what()}};
  }

  auto fit_json = [](const std::optional<analytics::DelayHistogram>& hist) {
    nlohmann::ordered_json j;
    if (!hist) {
      j["skipped"] = "no histogram";
      return j;
    }
    try {
      auto fit = analytics::fit_exponential(*hist);
      j["delta"] = fit.delta;
      j["amplitude"] = fit.amplitude;
      j["residual_rms"] = fit.rms_log_residual;
      j["bin_width"] = hist->bin_width;
      j["bins"] = hist->bins.size();
    } catch (const analytics::AnalyticsError& e) {
      j["skipped"] = e.what();
    }
    return j;
  };
  summary["delay_fit"] = {{"seconds", fit_json(hist_s)}, {"blocks", fit_json(hist_b)}};

  try {
    auto st = an.block_interval_stats();
    auto iv = [](const analytics::IntervalStats& s) {
      return nlohmann::ordered_json{{"mean_s", s.mean_s},     {"median_s", s.median_s},
                                    {"min_s", s.min_s},       {"max_s", s.max_s},
                                    {"stddev_s", s.stddev_s}};
    };
    summary["block_intervals"] = {{"interval_count", st.interval_count},
                                  {"listening", iv(st.listening)},
                                  {"blockchain", iv(st.blockchain)}};
  } catch (const analytics::AnalyticsError& e) {
    summary["block_intervals"] = {{"skipped", e.what()}};
  }

  auto counts = nlohmann::ordered_json::object();
  for (const auto& [label, n] : classify::class_counts(rows)) counts[label] = n;
  summary["class_counts"] = counts;
  summary["figures"] = figures;

  auto ref = nlohmann::ordered_json::object();
  ref["testable_against_live_network"] = false;
  ref["note"] =
      "Reference magnitudes from a 2016 measurement campaign on the public Bitcoin "
      "network. Shipped for context in reports; not comparable to simulator runs and "
      "not checked against today's network.";
  ref["delta_seconds"] = 2800.0;
  ref["delta_blocks"] = 4.1;
  ref["block_interval_mean_s"] = 550.05;
  ref["block_interval_median_s"] = 383.25;
  ref["block_interval_min_s"] = -5.48;
  ref["reach_fraction_at_1s"] = 0.10;
  ref["reach_fraction_at_10s"] = 0.60;
  ref["not_included_count_at_1h"] = 0.43;
  ref["not_included_count_at_30d"] = 0.20;
  ref["included_value_at_3h"] = 0.93;
  ref["included_value_at_30d"] = 0.999;
  summary["live_2016_reference"] = ref;

  {
    std::ofstream f(path_of("summary.json"), std::ios::trunc);
    if (!f) throw CliError(CliError::IoFailure, "cannot write summary.json");
    f << summary.dump(2) << "\n";
  }

  out << "analysis set " << an.analysis_set().size() << " txs (" << an.included_count()
      << " included), " << written.size() << " figures written, "
      << (std::size(kFigureFiles) - written.size()) << " skipped\n";

  m.outputs = written;
  m.outputs.push_back("summary.json");
  m.finished_ms = detail::wall_ms();
  write_manifest(m);
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportOpts {
  std::string out;  // an analyze output directory; the report lands beside it
};

inline std::string render_report(const nlohmann::ordered_json& s) {
  using detail::num6;
  std::ostringstream r;
  auto fnum = [&](const nlohmann::ordered_json& j) { return num6(j.get<double>()); };
  r << "blocksonar analysis report\n";
  r << "==========================\n\n";
  const auto& w = s.at("window");
  r << "window_ms    [" << w.at("start_ms").get<uint64_t>() << ", "
    << w.at("end_ms").get<uint64_t>() << ")\n";
  r << "horizon_ms   " << s.at("horizon_ms").get<uint64_t>() << "\n";
  const auto& as = s.at("analysis_set");
  r << "analysis set " << as.at("total").get<uint64_t>() << " txs: "
    << as.at("included").get<uint64_t>() << " included, " << as.at("censored").get<uint64_t>()
    << " censored; " << as.at("mdlb_count").get<uint64_t>() << " MDLB blocks\n\n";

  r << "inclusion latency\n";
  const auto& inc = s.at("inclusion");
  if (inc.contains("skipped")) {
    r << "  (skipped: " << inc.at("skipped").get<std::string>() << ")\n";
  } else {
    const auto& ni = inc.at("not_included_at");
    const auto& vf = inc.at("value_fraction_at");
    r << "  not included after 1h      " << fnum(ni.at("1h")) << "\n";
    r << "  not included after 30d     " << fnum(ni.at("30d")) << "\n";
    r << "  value included after 3h    " << fnum(vf.at("3h")) << "\n";
    r << "  value included after 30d   " << fnum(vf.at("30d")) << "\n";
    r << "  max included delay         " << fnum(inc.at("max_delay_seconds")) << " s\n";
  }
  r << "\n";

  r << "exponential delay fit\n";
  const auto& fit = s.at("delay_fit");
  for (const char* axis : {"seconds", "blocks"}) {
    const auto& f = fit.at(axis);
    if (f.contains("skipped"))
      r << "  delta_" << axis << "  (skipped: " << f.at("skipped").get<std::string>() << ")\n";
    else
      r << "  delta_" << axis << "  " << fnum(f.at("delta")) << "  (rms residual "
        << fnum(f.at("residual_rms")) << ")\n";
  }
  r << "\n";

  r << "block intervals\n";
  const auto& bi = s.at("block_intervals");
  if (bi.contains("skipped")) {
    r << "  (skipped: " << bi.at("skipped").get<std::string>() << ")\n";
  } else {
    r << "  n = " << bi.at("interval_count").get<uint64_t>() << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "  %-11s %-10s %-10s %-10s %-10s %s\n", "source", "mean_s",
                  "median_s", "min_s", "max_s", "stddev_s");
    r << line;
    for (const char* src : {"listening", "blockchain"}) {
      const auto& v = bi.at(src);
      std::snprintf(line, sizeof line, "  %-11s %-10s %-10s %-10s %-10s %s\n", src,
                    fnum(v.at("mean_s")).c_str(), fnum(v.at("median_s")).c_str(),
                    fnum(v.at("min_s")).c_str(), fnum(v.at("max_s")).c_str(),
                    fnum(v.at("stddev_s")).c_str());
      r << line;
    }
  }
  r << "\n";

  r << "class counts\n";
  for (const auto& [label, n] : s.at("class_counts").items())
    r << "  " << label << " " << n.get<uint64_t>() << "\n";
  r << "\n";

  r << "figures\n";
  for (const auto& [name, state] : s.at("figures").items())
    r << "  " << name << "  " << state.get<std::string>() << "\n";
  r << "\n";

  const auto& ref = s.at("live_2016_reference");
  r << "reference magnitudes (2016 public-network measurement, not testable against this run)\n";
  r << "  inclusion delay fit   delta " << fnum(ref.at("delta_seconds")) << " s, "
    << fnum(ref.at("delta_blocks")) << " blocks\n";
  r << "  block interval        mean " << fnum(ref.at("block_interval_mean_s")) << " s, median "
    << fnum(ref.at("block_interval_median_s")) << " s, min "
    << fnum(ref.at("block_interval_min_s")) << " s\n";
  r << "  propagation reach     " << fnum(ref.at("reach_fraction_at_1s")) << " of peers at 1 s, "
    << fnum(ref.at("reach_fraction_at_10s")) << " at 10 s\n";
  r << "  not included (count)  " << fnum(ref.at("not_included_count_at_1h")) << " after 1 h, "
    << fnum(ref.at("not_included_count_at_30d")) << " after 30 d\n";
  r << "  included (value)      " << fnum(ref.at("included_value_at_3h")) << " after 3 h, "
    << fnum(ref.at("included_value_at_30d")) << " after 30 d\n";
  return r.str();
}

inline int cmd_report(const ReportOpts& o, std::ostream& out) {
  namespace fs = std::filesystem;
  RunManifest m;
  m.subcommand = "report";
  m.output_dir = o.out;
  m.started_ms = detail::wall_ms();

  fs::path dir = o.out;
  fs::path summary_path = dir / "summary.json";
  if (!fs::exists(summary_path))
    throw CliError(CliError::MissingInputs, "missing input: summary.json");
  nlohmann::ordered_json summary;
  {
    std::ifstream f(summary_path);
    try {
      f >> summary;
    } catch (const std::exception& e) {
      throw CliError(CliError::ParseError, "summary.json: " + std::string(e.what()));
    }
  }
  if (!summary.contains("figures"))
    throw CliError(CliError::ParseError, "summary.json lacks a figures section");

  m.inputs = {summary_path.string()};
  std::vector<std::string> present;
  for (const char* name : kFigureFiles) {
    bool needed = summary["figures"].contains(name) &&
                  summary["figures"][name].get<std::string>() == "written";
    if (needed && !fs::exists(dir / name))
      throw CliError(CliError::MissingInputs, std::string("missing input: ") + name);
    if (needed) {
      present.push_back(name);
      m.inputs.push_back((dir / name).string());
    }
  }

  std::string text = render_report(summary);
  {
    std::ofstream f(dir / "report.txt", std::ios::trunc);
    if (!f) throw CliError(CliError::IoFailure, "cannot write report.txt");
    f << text;
  }
  m.outputs = {"report.txt"};

  fs::create_directories(dir / "plots");
  auto have = [&](const char* name) {
    return std::find(present.begin(), present.end(), name) != present.end();
  };
  auto stub = [&](const char* name, const std::string& body) {
    std::ofstream f(dir / "plots" / name, std::ios::trunc);
    if (!f) throw CliError(CliError::IoFailure, std::string("cannot write plots/") + name);
    f << "set datafile separator \",\"\n" << body;
    m.outputs.push_back(std::string("plots/") + name);
  };
  if (have("propagation_curves.csv"))
    stub("propagation.gp",
         "set logscale x\n"
         "set xlabel \"seconds since first block observation\"\n"
         "set ylabel \"peers reached\"\n"
         "plot \"../propagation_curves.csv\" every ::1 using 1:2 with lines title \"mean\", \\\n"
         "     \"../propagation_curves.csv\" every ::1 using 1:3 with lines title \"p10\", \\\n"
         "     \"../propagation_curves.csv\" every ::1 using 1:4 with lines title \"p90\"\n");
  if (have("delay_hist_seconds.csv"))
    stub("delay_hist_seconds.gp",
         "set logscale y\n"
         "set xlabel \"confirmation delay (s)\"\n"
         "set ylabel \"transactions\"\n"
         "plot \"../delay_hist_seconds.csv\" every ::1 using 1:2 with boxes title \"delay\"\n");
  if (have("delay_hist_blocks.csv"))
    stub("delay_hist_blocks.gp",
         "set logscale y\n"
         "set xlabel \"confirmation delay (blocks)\"\n"
         "set ylabel \"transactions\"\n"
         "plot \"../delay_hist_blocks.csv\" every ::1 using 1:2 with boxes title \"delay\"\n");
  if (have("cumulative_count.csv")) {
    std::string body =
        "set logscale x\n"
        "set xlabel \"seconds since first observation\"\n"
        "set ylabel \"fraction included\"\n"
        "plot \"../cumulative_count.csv\" every ::1 using 1:2 with lines title \"by count\"";
    if (have("cumulative_value.csv"))
      body += ", \\\n     \"../cumulative_value.csv\" every ::1 using 1:2 with lines title \"by value\"";
    stub("cumulative.gp", body + "\n");
  }
  if (have("value_vs_delay.csv")) {
    std::string body =
        "set logscale y\n"
        "set xlabel \"delay (blocks)\"\n"
        "set ylabel \"mean value (sats)\"\n"
        "plot \"../value_vs_delay.csv\" every ::1 using 1:2 with linespoints title \"value\"";
    if (have("fee_vs_delay.csv"))
      body += ", \\\n     \"../fee_vs_delay.csv\" every ::1 using 1:2 with linespoints title \"fee\"";
    stub("value_fee.gp", body + "\n");
  }
  if (have("tx_per_block.csv"))
    stub("tx_per_block.gp",
         "set xlabel \"block height\"\n"
         "set ylabel \"transactions\"\n"
         "plot \"../tx_per_block.csv\" every ::1 using 2:3 with points title \"observed\", \\\n"
         "     \"../tx_per_block.csv\" every ::1 using 2:4 with points title \"included\"\n");

  out << text;
  m.finished_ms = detail::wall_ms();
  write_manifest(m);
  return 0;
}

// ------------------------------------------------------------------ driver

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bitcoin-style gossip network observatory"};
  app.name("blocksonar");
  app.require_subcommand(1);

  SimulateOpts sim_o;
  uint64_t sim_seed = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "run the network simulator");
  sim_cmd->add_option("--config", sim_o.config, "simulator config file")->required();
  sim_cmd->add_option("--out", sim_o.out, "output directory");
  auto* sim_seed_opt = sim_cmd->add_option("--seed", sim_seed, "override the config rng seed");

  MonitorOpts mon_o;
  auto* mon_cmd = app.add_subcommand("monitor", "observe a network of live peers");
  mon_cmd->add_option("--config", mon_o.config, "monitor config file")->required();
  mon_cmd->add_option("--out", mon_o.out, "output directory");

  ClassifyOpts cls_o;
  uint64_t cls_ws = 0, cls_we = 0;
  auto* cls_cmd = app.add_subcommand("classify", "label every observed hash");
  cls_cmd->add_option("--log", cls_o.log, "event log CSV")->required();
  cls_cmd->add_option("--ledger", cls_o.ledger, "ledger JSONL")->required();
  cls_cmd->add_option("--out", cls_o.out, "output directory");
  auto* cls_ws_opt = cls_cmd->add_option("--window-start-ms", cls_ws, "listening window start");
  auto* cls_we_opt = cls_cmd->add_option("--window-end-ms", cls_we, "listening window end");

  AnalyzeOpts ana_o;
  uint64_t ana_ws = 0, ana_we = 0;
  auto* ana_cmd = app.add_subcommand("analyze", "emit figure tables and summary.json");
  ana_cmd->add_option("--log", ana_o.log, "event log CSV")->required();
  ana_cmd->add_option("--ledger", ana_o.ledger, "ledger JSONL")->required();
  ana_cmd->add_option("--out", ana_o.out, "output directory");
  ana_cmd->add_option("--classification", ana_o.classification,
                      "classification CSV to cross-check against");
  auto* ana_ws_opt = ana_cmd->add_option("--window-start-ms", ana_ws, "listening window start");
  auto* ana_we_opt = ana_cmd->add_option("--window-end-ms", ana_we, "listening window end");
  ana_cmd->add_option("--horizon-ms", ana_o.horizon_ms, "censoring horizon (default 30 days)");

  ReportOpts rep_o;
  auto* rep_cmd = app.add_subcommand("report", "render a text report from an analyze directory");
  rep_cmd->add_option("--out", rep_o.out, "analyze output directory");

  std::vector<const char*> argv;
  argv.push_back("blocksonar");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (sim_cmd->parsed()) {
      if (sim_seed_opt->count() > 0) sim_o.seed = sim_seed;
      sim_o.out = resolve_out(sim_o.out);
      return cmd_simulate(sim_o, out);
    }
    if (mon_cmd->parsed()) {
      mon_o.out = resolve_out(mon_o.out);
      return cmd_monitor(mon_o, out);
    }
    if (cls_cmd->parsed()) {
      if (cls_ws_opt->count() > 0) cls_o.window_start_ms = cls_ws;
      if (cls_we_opt->count() > 0) cls_o.window_end_ms = cls_we;
      cls_o.out = resolve_out(cls_o.out);
      return cmd_classify(cls_o, out);
    }
    if (ana_cmd->parsed()) {
      if (ana_ws_opt->count() > 0) ana_o.window_start_ms = ana_ws;
      if (ana_we_opt->count() > 0) ana_o.window_end_ms = ana_we;
      ana_o.out = resolve_out(ana_o.out);
      return cmd_analyze(ana_o, out);
    }
    if (rep_cmd->parsed()) {
      rep_o.out = resolve_out(rep_o.out);
      return cmd_report(rep_o, out);
    }
  } catch (const CliError& e) {
    err << kind_label(e.kind) << ": " << e.what() << "\n";
    return 1;
  } catch (const crawl::CrawlError& e) {
    err << "NoSeeds: " << e.what() << "\n";
    return 1;
  } catch (const sim::SimError& e) {
    const char* label = e.kind == sim::SimError::ConfigInvalid ? "ConfigInvalid"
                        : e.kind == sim::SimError::Io          ? "IoFailure"
                                                               : "DisconnectedAfterRetries";
    err << label << ": " << e.what() << "\n";
    return 1;
  } catch (const eventlog::LogError& e) {
    err << "ParseError: " << e.what() << "\n";
    return 1;
  } catch (const chain::ChainError& e) {
    err << "ParseError: " << e.what() << "\n";
    return 1;
  } catch (const classify::ClassifyError& e) {
    err << "ParseError: " << e.what() << "\n";
    return 1;
  } catch (const analytics::AnalyticsError& e) {
    err << "AnalysisError: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "IoFailure: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace blocksonar::cli
