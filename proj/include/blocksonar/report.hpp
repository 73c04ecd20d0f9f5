#pragma once

// File emitters for the analysis pipeline: one CSV per figure, summary.json,
// and the plain-text report + gnuplot stub derived from them. A figure whose
// preconditions fail is noted in the summary and skipped; the run proceeds.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blocksonar/analytics.hpp"

namespace blocksonar::report {

using nlohmann::ordered_json;

// Deterministic shortest-round-trip double formatting for CSV cells.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct AnalyzeParams {
  double bin_width_s = 600;
  double bin_width_blocks = 1;
  double horizon_s = 0;  // derived from horizon_ms
  uint64_t horizon_ms = 0;
  size_t grid_points = 200;
};

namespace detail {

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const std::string& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << header << "\n";
  }
  template <class... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cells, first = false), ...);
    out_ << "\n";
  }
  std::ofstream out_;
};

}  // namespace detail

inline ordered_json interval_stats_json(const analytics::IntervalStats& s) {
  return ordered_json{{"min_s", s.min_s},       {"max_s", s.max_s},
                      {"mean_s", s.mean_s},     {"variance_s2", s.variance_s2},
                      {"stddev_s", s.stddev_s}, {"median_s", s.median_s}};
}

// Reference magnitudes from the 2016 live-network measurement campaign this
// tool's statistics mirror. Comparison baseline only: today's network cannot
// reproduce them, so nothing tests against these.
inline ordered_json live_2016_reference() {
  return ordered_json{
      {"_comment",
       "Reference magnitudes from a 2016 live-network measurement campaign; "
       "kept for side-by-side comparison only and not testable against the "
       "current network."},
      {"testable_against_live_network", false},
      {"delta_seconds", 2800.0},
      {"delta_blocks", 4.1},
      {"mean_block_interval_s", 550.05},
      {"median_block_interval_s", 383.25},
      {"min_block_interval_s", -5.48},
      {"reach_fraction_at_1s", 0.10},
      {"reach_fraction_at_10s", 0.60},
  };
}

// Writes every figure CSV plus summary.json into out_dir; returns the summary.
inline ordered_json run_full_analysis(const analytics::Analytics& an,
                                      const std::vector<classify::ClassifiedHash>& rows,
                                      const AnalyzeParams& p, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ordered_json summary;
  ordered_json figures;

  const auto& window = an.classifier().window();
  summary["window"] = {{"start_ms", window.start_ms}, {"end_ms", window.end_ms}};
  summary["horizon_ms"] = p.horizon_ms;

  ordered_json counts;
  counts["observed_hashes"] = rows.size();
  for (const auto& [label, n] : classify::class_counts(rows)) counts[label] = n;
  counts["analysis_set"] = an.analysis_set().size();
  counts["included"] = an.included_count();
  counts["censored"] = an.censored_count();
  counts["mdlb"] = an.mdlb_hashes().size();
  summary["counts"] = std::move(counts);

  auto emit = [&](const char* name, auto&& body) {
    try {
      body();
      figures[name] = "written";
    } catch (const analytics::AnalyticsError& e) {
      figures[name] = std::string("skipped: ") + e.what();
    }
  };

  ordered_json fits;
  emit("delay_hist_seconds.csv", [&] {
    auto h = an.histogram_seconds(p.bin_width_s, p.horizon_s);
    detail::CsvFile csv(fs::path(out_dir) / "delay_hist_seconds.csv", "bin_lower_s,count");
    for (const auto& [edge, count] : h.bins) csv.row(fmt(edge), count);
    try {
      auto f = analytics::fit_exponential(h);
      fits["seconds"] = {{"delta", f.delta},
                         {"amplitude", f.amplitude},
                         {"rms_log_residual", f.rms_log_residual},
                         {"bin_width_s", p.bin_width_s}};
    } catch (const analytics::AnalyticsError& e) {
      fits["seconds"] = std::string("unavailable: ") + e.what();
    }
  });
  emit("delay_hist_blocks.csv", [&] {
    double horizon_blocks = std::max(1.0, p.horizon_s / 600.0);
    auto h = an.histogram_blocks(p.bin_width_blocks, horizon_blocks);
    detail::CsvFile csv(fs::path(out_dir) / "delay_hist_blocks.csv", "bin_lower_blocks,count");
    for (const auto& [edge, count] : h.bins) csv.row(fmt(edge), count);
    try {
      auto f = analytics::fit_exponential(h);
      fits["blocks"] = {{"delta", f.delta},
                        {"amplitude", f.amplitude},
                        {"rms_log_residual", f.rms_log_residual},
                        {"bin_width_blocks", p.bin_width_blocks}};
    } catch (const analytics::AnalyticsError& e) {
      fits["blocks"] = std::string("unavailable: ") + e.what();
    }
  });

  emit("cumulative_count.csv", [&] {
    auto c = an.cumulative_inclusion(p.horizon_s, p.grid_points);
    detail::CsvFile count_csv(fs::path(out_dir) / "cumulative_count.csv",
                              "t_s,fraction_included");
    detail::CsvFile value_csv(fs::path(out_dir) / "cumulative_value.csv",
                              "t_s,fraction_value_included");
    for (size_t i = 0; i < c.grid_s.size(); ++i) {
      count_csv.row(fmt(c.grid_s[i]), fmt(c.fraction_by_count[i]));
      value_csv.row(fmt(c.grid_s[i]), fmt(c.fraction_by_value[i]));
    }
    figures["cumulative_value.csv"] = "written";
  });

  emit("propagation_curves.csv", [&] {
    auto prop = an.propagation_analysis();
    detail::CsvFile csv(fs::path(out_dir) / "propagation_curves.csv",
                        "t_s,mean_nodes,p10_nodes,p90_nodes");
    for (size_t i = 0; i < prop.grid_s.size(); ++i)
      csv.row(fmt(prop.grid_s[i]), fmt(prop.mean[i]), fmt(prop.p10[i]), fmt(prop.p90[i]));
  });

  emit("value_vs_delay.csv", [&] {
    detail::CsvFile csv(fs::path(out_dir) / "value_vs_delay.csv",
                        "delay_blocks,mean_value_sats,tx_count");
    for (const auto& [blocks, mean, n] : an.value_vs_delay()) csv.row(blocks, fmt(mean), n);
  });
  emit("fee_vs_delay.csv", [&] {
    detail::CsvFile csv(fs::path(out_dir) / "fee_vs_delay.csv",
                        "delay_blocks,mean_fee_sats,tx_count");
    for (const auto& [blocks, mean, n] : an.fee_vs_delay()) csv.row(blocks, fmt(mean), n);
  });

  emit("tx_per_block.csv", [&] {
    detail::CsvFile csv(fs::path(out_dir) / "tx_per_block.csv",
                        "block_hash,height,observed_tx,included_tx");
    for (const auto& c : an.tx_per_block_comparison())
      csv.row(c.hash, c.height, c.observed_tx, c.included_tx);
  });

  emit("tx_rate_per_hour.csv", [&] {
    detail::CsvFile csv(fs::path(out_dir) / "tx_rate_per_hour.csv",
                        "hour_start_ms,valid_tx,invalid_tx");
    for (const auto& b : an.rate_per_hour()) csv.row(b.hour_start_ms, b.valid_tx, b.invalid_tx);
  });

  summary["fits"] = fits.empty() ? ordered_json::object() : fits;

  constexpr double kHourS = 3600, k3HourS = 10'800, k30DayS = 2'592'000;
  ordered_json fractions;
  auto frac = [&](const char* name, auto&& body) {
    try {
      fractions[name] = body();
    } catch (const analytics::AnalyticsError& e) {
      fractions[name] = std::string("unavailable: ") + e.what();
    }
  };
  frac("not_included_at_1h",
       [&] { return 1.0 - an.fraction_included_at(kHourS); });
  frac("not_included_at_30d",
       [&] { return 1.0 - an.fraction_included_at(k30DayS); });
  frac("not_included_at_1h_all_observed",
       [&] { return an.observed_fraction_not_included_at(kHourS); });
  frac("not_included_at_30d_all_observed",
       [&] { return an.observed_fraction_not_included_at(k30DayS); });
  frac("value_included_at_3h", [&] { return an.value_fraction_included_at(k3HourS); });
  frac("value_included_at_30d", [&] { return an.value_fraction_included_at(k30DayS); });
  summary["fractions"] = std::move(fractions);

  try {
    auto st = an.block_interval_stats();
    summary["block_intervals"] = {{"count", st.interval_count},
                                  {"listening", interval_stats_json(st.listening)},
                                  {"blockchain", interval_stats_json(st.blockchain)}};
  } catch (const analytics::AnalyticsError& e) {
    summary["block_intervals"] = std::string("unavailable: ") + e.what();
  }

  summary["figures"] = std::move(figures);
  summary["live_2016_reference"] = live_2016_reference();

  std::ofstream out(fs::path(out_dir) / "summary.json");
  out << summary.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write summary.json");
  return summary;
}

class ReportError : public std::runtime_error {
 public:
  explicit ReportError(const std::string& what) : std::runtime_error(what) {}
};

// Renders report.txt and plots.gp from an analyze output directory.
// Deterministic: same inputs, same bytes.
inline void write_report(const std::string& analysis_dir) {
  namespace fs = std::filesystem;
  auto summary_path = fs::path(analysis_dir) / "summary.json";
  std::ifstream in(summary_path);
  if (!in) throw ReportError("MissingInputs: " + summary_path.string());
  ordered_json s;
  try {
    in >> s;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("unreadable " + summary_path.string() + ": " + e.what());
  }

  std::vector<std::string> plot_files;
  for (const auto& [file, state] : s.at("figures").items())
    if (state == "written") {
      if (!fs::exists(fs::path(analysis_dir) / file))
        throw ReportError("MissingInputs: " + file + " (listed in summary.json)");
      plot_files.push_back(file);
    }

  auto num = [](const ordered_json& j, const char* key) -> std::string {
    if (!j.contains(key)) return "n/a";
    const auto& v = j.at(key);
    return v.is_number() ? fmt(v.get<double>()) : "n/a";
  };

  std::ofstream rep(fs::path(analysis_dir) / "report.txt");
  rep << "block and transaction propagation report\n";
  rep << "=========================================\n\n";
  const auto& counts = s.at("counts");
  rep << "observed hashes: " << counts.at("observed_hashes").get<uint64_t>() << "\n";
  for (const char* cls : {"MDLB", "EB", "FB", "IB", "BT", "ET", "IT", "UNCONFIRMED", "UNKNOWN"})
    if (counts.contains(cls))
      rep << "  " << cls << ": " << counts.at(cls).get<uint64_t>() << "\n";
  rep << "analysis set: " << counts.at("analysis_set").get<uint64_t>() << " ("
      << counts.at("included").get<uint64_t>() << " included, "
      << counts.at("censored").get<uint64_t>() << " censored)\n\n";

  rep << "confirmation delay decay constant\n";
  for (const char* unit : {"seconds", "blocks"}) {
    rep << "  " << unit << ": ";
    if (s.at("fits").contains(unit) && s.at("fits").at(unit).is_object())
      rep << "delta " << num(s.at("fits").at(unit), "delta") << ", rms log residual "
          << num(s.at("fits").at(unit), "rms_log_residual") << "\n";
    else
      rep << "n/a\n";
  }

  const auto& fr = s.at("fractions");
  rep << "\ninclusion fractions (analysis set)\n";
  rep << "  not included after 1h:  " << num(fr, "not_included_at_1h") << "\n";
  rep << "  not included after 30d: " << num(fr, "not_included_at_30d") << "\n";
  rep << "  value included in 3h:   " << num(fr, "value_included_at_3h") << "\n";
  rep << "  value included in 30d:  " << num(fr, "value_included_at_30d") << "\n";

  rep << "\nblock intervals\n";
  if (s.at("block_intervals").is_object()) {
    const auto& bi = s.at("block_intervals");
    rep << "  intervals: " << bi.at("count").get<uint64_t>() << "\n";
    for (const char* side : {"listening", "blockchain"}) {
      const auto& st = bi.at(side);
      rep << "  " << side << ": mean " << num(st, "mean_s") << " s, median "
          << num(st, "median_s") << " s, min " << num(st, "min_s") << " s, max "
          << num(st, "max_s") << " s, stddev " << num(st, "stddev_s") << " s\n";
    }
  } else {
    rep << "  n/a\n";
  }

  const auto& ref = s.at("live_2016_reference");
  rep << "\n2016 live-network reference magnitudes (comparison only, not testable)\n";
  rep << "  delta: " << num(ref, "delta_seconds") << " s / " << num(ref, "delta_blocks")
      << " blocks\n";
  rep << "  block interval: mean " << num(ref, "mean_block_interval_s") << " s, median "
      << num(ref, "median_block_interval_s") << " s, min " << num(ref, "min_block_interval_s")
      << " s\n";
  rep << "  reach: " << num(ref, "reach_fraction_at_1s") << " of nodes in 1 s, "
      << num(ref, "reach_fraction_at_10s") << " in 10 s\n";
  if (!rep) throw ReportError("cannot write report.txt");

  std::ofstream gp(fs::path(analysis_dir) / "plots.gp");
  gp << "# gnuplot stubs for the emitted figures; render externally.\n";
  gp << "set datafile separator ','\n";
  for (const auto& file : plot_files) {
    if (file == "cumulative_count.csv" || file == "cumulative_value.csv" ||
        file == "propagation_curves.csv")
      gp << "set logscale x\n";
    else
      gp << "unset logscale\n";
    gp << "plot '" << file << "' skip 1 using 1:2 with lines title '" << file << "'\n";
    gp << "pause -1\n";
  }
  if (!gp) throw ReportError("cannot write plots.gp");
}

}  // namespace blocksonar::report
