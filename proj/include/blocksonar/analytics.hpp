#pragma once

// Delay, propagation and inclusion statistics over a closed log + ledger:
// per-tx confirmation delays (seconds and blocks), delay histograms with an
// exponential-decay fit, cumulative inclusion curves by count and by value,
// per-block propagation reach curves, block interval statistics, hourly rates
// and the per-figure CSV emitters.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "blocksonar/chainview.hpp"
#include "blocksonar/classify.hpp"
#include "blocksonar/eventlog.hpp"
#include "blocksonar/util.hpp"

namespace blocksonar::analytics {

class AnalyticsError : public std::runtime_error {
 public:
  enum Kind {
    NotIncluded,
    NotInAnalysisSet,
    EmptySet,
    TooFewBins,
    NonDecaying,
    NoBlocks,
    TooFewBlocks,
  };
  AnalyticsError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

struct DelayHistogram {
  double bin_width = 0;  // seconds or blocks; unit-agnostic
  std::vector<std::pair<double, uint64_t>> bins;  // (lower_edge, count), contiguous from 0
  uint64_t censored_count = 0;  // never included, or delay at/past horizon

  uint64_t total() const {
    uint64_t n = 0;
    for (const auto& [edge, c] : bins) n += c;
    return n;
  }
};

struct FitResult {
  double delta = 0;  // characteristic decay time, -1/slope
  double amplitude = 0;
  double rms_log_residual = 0;
};

struct PropagationSummary {
  std::vector<double> grid_s;  // sample times since each block's first observation
  std::vector<std::vector<double>> per_block;  // node counts per MDLB, grid-aligned
  std::vector<double> mean;
  std::vector<double> p10;
  std::vector<double> p90;
};

struct CumulativeInclusion {
  std::vector<double> grid_s;  // log-spaced
  std::vector<double> fraction_by_count;
  std::vector<double> fraction_by_value;
};

struct IntervalStats {
  double min_s = 0, max_s = 0, mean_s = 0, variance_s2 = 0, stddev_s = 0, median_s = 0;
};

struct BlockIntervalStats {
  IntervalStats listening;   // from first network observations
  IntervalStats blockchain;  // from miner-set block timestamps
  size_t interval_count = 0;
};

struct HourBucket {
  uint64_t hour_start_ms = 0;
  uint64_t valid_tx = 0;    // BT, ET or not-yet-included
  uint64_t invalid_tx = 0;  // IT
};

// ---- pure helpers ------------------------------------------------------------

// Bins [0, horizon) at fixed width; delays at or past the horizon are
// censored, never binned. Negative delays are a caller bug.
inline DelayHistogram delay_histogram(const std::vector<double>& delays, double bin_width,
                                      double horizon, uint64_t already_censored = 0) {
  if (!(bin_width > 0) || !(horizon > 0)) throw std::invalid_argument("bad histogram shape");
  DelayHistogram h;
  h.bin_width = bin_width;
  h.censored_count = already_censored;
  size_t nbins = static_cast<size_t>(std::ceil(horizon / bin_width));
  std::vector<uint64_t> counts(nbins, 0);
  uint64_t binned = 0;
  for (double d : delays) {
    if (d < 0) throw std::invalid_argument("negative delay");
    if (d >= horizon) {
      ++h.censored_count;
      continue;
    }
    ++counts[static_cast<size_t>(d / bin_width)];
    ++binned;
  }
  if (binned == 0)
    throw AnalyticsError(AnalyticsError::EmptySet, "no delays below the horizon to bin");
  h.bins.reserve(nbins);
  for (size_t i = 0; i < nbins; ++i)
    h.bins.emplace_back(static_cast<double>(i) * bin_width, counts[i]);
  while (!h.bins.empty() && h.bins.back().second == 0) h.bins.pop_back();
  return h;
}

// Least squares on log(count) vs bin center over nonzero bins; decay time is
// -1/slope.
inline FitResult fit_exponential(const DelayHistogram& hist) {
  std::vector<double> xs, ys;
  for (const auto& [edge, count] : hist.bins) {
    if (count == 0) continue;
    xs.push_back(edge + hist.bin_width / 2);
    ys.push_back(std::log(static_cast<double>(count)));
  }
  if (xs.size() < 3)
    throw AnalyticsError(AnalyticsError::TooFewBins,
                         "need 3 nonzero bins, have " + std::to_string(xs.size()));
  double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  double denom = n * sxx - sx * sx;
  double slope = (n * sxy - sx * sy) / denom;
  double intercept = (sy - slope * sx) / n;
  if (slope >= 0)
    throw AnalyticsError(AnalyticsError::NonDecaying, "histogram does not decay");
  double ss = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double r = ys[i] - (intercept + slope * xs[i]);
    ss += r * r;
  }
  return {-1.0 / slope, std::exp(intercept), std::sqrt(ss / n)};
}

// ---- the full pipeline -------------------------------------------------------

// Owns the derived state for one (ledger, log, window) triple. The chain view
// is annotated with observation times up front; everything else is computed
// lazily and cached where it pays.
class Analytics {
 public:
  Analytics(chain::ChainView& chain, const eventlog::Log& log, classify::ListeningWindow window)
      : chain_(chain), log_(log) {
    chain_.attach_observations(log_);
    classifier_.emplace(chain_, log_, window);
    analysis_set_ = classifier_->analysis_set();
    mdlbs_ = classifier_->mdlb_hashes();
    for (const auto& txid : analysis_set_) {
      const chain::TxRecord* tx = chain_.tx(txid);
      total_value_ += tx->value_sats;
      if (chain_.inclusion(txid))
        included_.push_back(
            {txid, delay_seconds(txid), delay_blocks(txid), tx->value_sats, tx->fee_sats});
      else
        ++censored_count_;
    }
    std::sort(included_.begin(), included_.end(),
              [](const IncludedTx& a, const IncludedTx& b) { return a.delay_s < b.delay_s; });
  }

  const classify::Classifier& classifier() const { return *classifier_; }
  const std::set<std::string>& analysis_set() const { return analysis_set_; }
  const std::vector<std::string>& mdlb_hashes() const { return mdlbs_; }
  uint64_t censored_count() const { return censored_count_; }
  size_t included_count() const { return included_.size(); }

  double delay_seconds(const std::string& txid) const {
    auto [tx_obs, block_hash] = delay_inputs(txid);
    return (static_cast<double>(classifier_->block_obs(block_hash)) -
            static_cast<double>(tx_obs)) /
           1000.0;
  }

  uint64_t delay_blocks(const std::string& txid) const {
    auto [tx_obs, block_hash] = delay_inputs(txid);
    uint64_t height = chain_.block(block_hash)->height;
    uint64_t tip = chain_.tip_height_at(tx_obs);
    // A block the monitor first saw late can sit below the tip the network
    // had when its tx appeared; the wait is then not positive. Saturate so
    // the anomaly lands visibly in the zero bin instead of wrapping.
    return height > tip ? height - tip : 0;
  }

  std::vector<double> delays_seconds() const {
    std::vector<double> out;
    out.reserve(included_.size());
    for (const auto& t : included_) out.push_back(t.delay_s);
    return out;
  }

  std::vector<double> delays_blocks() const {
    std::vector<double> out;
    out.reserve(included_.size());
    for (const auto& t : included_) out.push_back(static_cast<double>(t.delay_blocks));
    return out;
  }

  DelayHistogram histogram_seconds(double bin_width_s, double horizon_s) const {
    return delay_histogram(delays_seconds(), bin_width_s, horizon_s, censored_count_);
  }

  DelayHistogram histogram_blocks(double bin_width_blocks, double horizon_blocks) const {
    return delay_histogram(delays_blocks(), bin_width_blocks, horizon_blocks, censored_count_);
  }

  // Exact (not grid-sampled) fraction of the analysis set included within
  // t_s seconds of first observation; censored txs count in the denominator.
  double fraction_included_at(double t_s) const {
    if (analysis_set_.empty())
      throw AnalyticsError(AnalyticsError::EmptySet, "empty analysis set");
    return static_cast<double>(included_upto(t_s)) / static_cast<double>(analysis_set_.size());
  }

  double value_fraction_included_at(double t_s) const {
    if (total_value_ == 0)
      throw AnalyticsError(AnalyticsError::EmptySet, "no value in analysis set");
    size_t n = included_upto(t_s);
    unsigned long long v = 0;
    for (size_t i = 0; i < n; ++i) v += included_[i].value_sats;
    return static_cast<double>(v) / static_cast<double>(total_value_);
  }

  // Same statistic over every observed valid transaction (no analysis-set
  // filtering): the loose reading of "fraction not included after t".
  double observed_fraction_not_included_at(double t_s) const {
    uint64_t valid = 0, not_included = 0;
    for (const auto& fo : log_.first_observations(eventlog::ObjKind::tx)) {
      if (chain_.tx(fo.hash) == nullptr) continue;  // invalid traffic
      ++valid;
      auto inc = chain_.inclusion(fo.hash);
      if (!inc) {
        ++not_included;
        continue;
      }
      double d_s = (static_cast<double>(classifier_->block_obs(inc->block_hash)) -
                    static_cast<double>(fo.first_ts_ms)) /
                   1000.0;
      if (d_s > t_s) ++not_included;
    }
    if (valid == 0) throw AnalyticsError(AnalyticsError::EmptySet, "no valid observed txs");
    return static_cast<double>(not_included) / static_cast<double>(valid);
  }

  CumulativeInclusion cumulative_inclusion(double horizon_s, size_t grid_points = 200) const {
    if (analysis_set_.empty())
      throw AnalyticsError(AnalyticsError::EmptySet, "empty analysis set");
    CumulativeInclusion out;
    out.grid_s = log_spaced(1.0, horizon_s, grid_points);
    double total = static_cast<double>(analysis_set_.size());
    double total_v = static_cast<double>(total_value_);
    size_t i = 0;
    unsigned long long v = 0;
    for (double t : out.grid_s) {
      while (i < included_.size() && included_[i].delay_s <= t) v += included_[i++].value_sats;
      out.fraction_by_count.push_back(static_cast<double>(i) / total);
      out.fraction_by_value.push_back(total_v == 0 ? 0.0 : static_cast<double>(v) / total_v);
    }
    return out;
  }

  // Reach curves for every MDLB, rebased to its first observation and
  // truncated where the next main-chain block was first seen.
  PropagationSummary propagation_analysis(size_t grid_points = 100) const {
    if (mdlbs_.empty()) throw AnalyticsError(AnalyticsError::NoBlocks, "no MDLB to analyze");
    struct Curve {
      std::vector<std::pair<uint64_t, size_t>> steps;  // (ms since first obs, count)
      uint64_t span_ms = 0;
    };
    std::vector<Curve> curves;
    uint64_t max_span = 1;
    for (const auto& hash : mdlbs_) {
      uint64_t t0 = log_.first_observation(hash, eventlog::ObjKind::block)->first_ts_ms;
      uint64_t until = classifier_->next_block_obs(chain_.block(hash)->height);
      Curve c;
      for (auto& [ts, n] : log_.reach_count_series(hash, until)) c.steps.emplace_back(ts - t0, n);
      c.span_ms = until == UINT64_MAX ? (c.steps.empty() ? 0 : c.steps.back().first)
                                      : until - t0;
      max_span = std::max(max_span, std::max<uint64_t>(c.span_ms, 1));
      curves.push_back(std::move(c));
    }

    PropagationSummary out;
    for (double g : log_spaced(1.0, static_cast<double>(max_span), grid_points))
      out.grid_s.push_back(g / 1000.0);
    for (const auto& c : curves) {
      std::vector<double> sampled;
      sampled.reserve(out.grid_s.size());
      for (double t_s : out.grid_s) {
        uint64_t t_ms = static_cast<uint64_t>(t_s * 1000.0);
        size_t count = 0;
        for (const auto& [ts, n] : c.steps) {
          if (ts > t_ms) break;
          count = n;
        }
        sampled.push_back(static_cast<double>(count));
      }
      out.per_block.push_back(std::move(sampled));
    }
    for (size_t g = 0; g < out.grid_s.size(); ++g) {
      std::vector<double> col;
      col.reserve(out.per_block.size());
      for (const auto& row : out.per_block) col.push_back(row[g]);
      out.mean.push_back(mean_of(col));
      out.p10.push_back(quantile_of(col, 0.10));
      out.p90.push_back(quantile_of(col, 0.90));
    }
    return out;
  }

  BlockIntervalStats block_interval_stats() const {
    if (mdlbs_.size() < 2)
      throw AnalyticsError(AnalyticsError::TooFewBlocks,
                           "need 2 MDLBs, have " + std::to_string(mdlbs_.size()));
    std::vector<double> obs_iv, time_iv;
    for (size_t i = 1; i < mdlbs_.size(); ++i) {
      uint64_t a_obs = log_.first_observation(mdlbs_[i - 1], eventlog::ObjKind::block)->first_ts_ms;
      uint64_t b_obs = log_.first_observation(mdlbs_[i], eventlog::ObjKind::block)->first_ts_ms;
      obs_iv.push_back((static_cast<double>(b_obs) - static_cast<double>(a_obs)) / 1000.0);
      double a_t = static_cast<double>(chain_.block(mdlbs_[i - 1])->time_ms);
      double b_t = static_cast<double>(chain_.block(mdlbs_[i])->time_ms);
      time_iv.push_back((b_t - a_t) / 1000.0);  // may be negative: miner clocks drift
    }
    BlockIntervalStats st;
    st.interval_count = obs_iv.size();
    st.listening = interval_stats(obs_iv);
    st.blockchain = interval_stats(time_iv);
    return st;
  }

  // Distinct transactions per hour of first observation, valid vs invalid.
  // Contiguous buckets from the first to the last observed-tx hour.
  std::vector<HourBucket> rate_per_hour() const {
    constexpr uint64_t kHourMs = 3'600'000;
    std::map<uint64_t, HourBucket> buckets;
    for (const auto& fo : log_.first_observations(eventlog::ObjKind::tx)) {
      uint64_t hour = fo.first_ts_ms / kHourMs;
      auto& b = buckets[hour];
      b.hour_start_ms = hour * kHourMs;
      if (chain_.tx(fo.hash) == nullptr)
        ++b.invalid_tx;
      else
        ++b.valid_tx;
    }
    std::vector<HourBucket> out;
    if (buckets.empty()) return out;
    for (uint64_t h = buckets.begin()->first; h <= buckets.rbegin()->first; ++h) {
      auto it = buckets.find(h);
      out.push_back(it != buckets.end() ? it->second : HourBucket{h * kHourMs, 0, 0});
    }
    return out;
  }

  // Mean value (or fee) of included analysis-set txs grouped by block delay.
  std::vector<std::tuple<uint64_t, double, size_t>> value_vs_delay() const {
    return grouped_mean([](const IncludedTx& t) { return static_cast<double>(t.value_sats); });
  }
  std::vector<std::tuple<uint64_t, double, size_t>> fee_vs_delay() const {
    return grouped_mean([](const IncludedTx& t) { return static_cast<double>(t.fee_sats); });
  }

  struct BlockComparison {
    std::string hash;
    uint64_t height = 0;
    uint64_t observed_tx = 0;  // distinct txs first seen while it was mined
    uint64_t included_tx = 0;  // its non-coinbase tx count
  };

  // Per MDLB interval (previous MDLB observation to this one): transactions
  // first observed in it vs transactions the closing block included. The
  // coinbase is not counted: it is never broadcast, so it has no observable
  // counterpart.
  std::vector<BlockComparison> tx_per_block_comparison() const {
    if (mdlbs_.size() < 2)
      throw AnalyticsError(AnalyticsError::NoBlocks, "need 2 MDLBs for intervals");
    auto tx_obs = log_.first_observations(eventlog::ObjKind::tx);  // sorted by ts
    std::vector<BlockComparison> out;
    for (size_t i = 1; i < mdlbs_.size(); ++i) {
      uint64_t lo = log_.first_observation(mdlbs_[i - 1], eventlog::ObjKind::block)->first_ts_ms;
      uint64_t hi = log_.first_observation(mdlbs_[i], eventlog::ObjKind::block)->first_ts_ms;
      const chain::BlockRecord* b = chain_.block(mdlbs_[i]);
      BlockComparison cmp{b->hash, b->height, 0, 0};
      for (const auto& fo : tx_obs)
        if (fo.first_ts_ms >= lo && fo.first_ts_ms < hi) ++cmp.observed_tx;
      for (const auto& t : b->txs)
        if (!t.is_coinbase) ++cmp.included_tx;
      out.push_back(std::move(cmp));
    }
    return out;
  }

 private:
  struct IncludedTx {
    std::string txid;
    double delay_s = 0;
    uint64_t delay_blocks = 0;
    uint64_t value_sats = 0;
    uint64_t fee_sats = 0;
  };

  std::pair<uint64_t, std::string> delay_inputs(const std::string& txid) const {
    if (!analysis_set_.count(txid))
      throw AnalyticsError(AnalyticsError::NotInAnalysisSet, txid + " not in analysis set");
    auto inc = chain_.inclusion(txid);
    if (!inc) throw AnalyticsError(AnalyticsError::NotIncluded, txid + " censored at horizon");
    uint64_t tx_obs = log_.first_observation(txid, eventlog::ObjKind::tx)->first_ts_ms;
    return {tx_obs, inc->block_hash};
  }

  size_t included_upto(double t_s) const {
    auto it = std::upper_bound(included_.begin(), included_.end(), t_s,
                               [](double t, const IncludedTx& x) { return t < x.delay_s; });
    return static_cast<size_t>(it - included_.begin());
  }

  static IntervalStats interval_stats(const std::vector<double>& v) {
    IntervalStats s;
    s.min_s = *std::min_element(v.begin(), v.end());
    s.max_s = *std::max_element(v.begin(), v.end());
    s.mean_s = mean_of(v);
    s.variance_s2 = variance_of(v);
    s.stddev_s = std::sqrt(s.variance_s2);
    s.median_s = median_of(v);
    return s;
  }

  template <class F>
  std::vector<std::tuple<uint64_t, double, size_t>> grouped_mean(F value_of) const {
    if (included_.empty())
      throw AnalyticsError(AnalyticsError::EmptySet, "no included transactions");
    std::map<uint64_t, std::pair<double, size_t>> groups;
    for (const auto& t : included_) {
      auto& [sum, n] = groups[t.delay_blocks];
      sum += value_of(t);
      ++n;
    }
    std::vector<std::tuple<uint64_t, double, size_t>> out;
    for (const auto& [blocks, agg] : groups)
      out.emplace_back(blocks, agg.first / static_cast<double>(agg.second), agg.second);
    return out;
  }

  chain::ChainView& chain_;
  const eventlog::Log& log_;
  std::optional<classify::Classifier> classifier_;
  std::set<std::string> analysis_set_;
  std::vector<std::string> mdlbs_;
  std::vector<IncludedTx> included_;  // sorted by delay_s
  uint64_t censored_count_ = 0;
  unsigned long long total_value_ = 0;
};

}  // namespace blocksonar::analytics
