#pragma once

// Shared small helpers: hex, wall clock, order statistics, log grids and the
// deterministic samplers used by the simulator.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace blocksonar {

using bytes = std::vector<uint8_t>;

inline std::string to_hex(std::span<const uint8_t> data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (uint8_t b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

inline int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline bytes from_hex(std::string_view s) {
  if (s.size() % 2 != 0) throw std::invalid_argument("hex string with odd length");
  bytes out(s.size() / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    int hi = hex_nibble(s[2 * i]), lo = hex_nibble(s[2 * i + 1]);
    if (hi < 0 || lo < 0) throw std::invalid_argument("non-hex character");
    out[i] = static_cast<uint8_t>(hi << 4 | lo);
  }
  return out;
}

inline bool is_hex_hash(std::string_view s) {
  if (s.size() != 64) return false;
  for (char c : s)
    if (hex_nibble(c) < 0 || (c >= 'A' && c <= 'F')) return false;  // lowercase only
  return true;
}

inline uint64_t wall_clock_ms() {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::system_clock::now().time_since_epoch())
                                   .count());
}

inline uint64_t steady_ms() {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now().time_since_epoch())
                                   .count());
}

// ---- order statistics --------------------------------------------------------

inline double mean_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Unbiased sample variance (n-1 denominator); 0 for n < 2.
inline double variance_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Linear-interpolation quantile over an unsorted sample, q in [0, 1].
inline double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double pos = q * static_cast<double>(v.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

inline double median_of(std::vector<double> v) { return quantile_of(std::move(v), 0.5); }

// n log-spaced points from lo to hi inclusive; lo must be > 0.
inline std::vector<double> log_spaced(double lo, double hi, size_t n) {
  if (!(lo > 0) || !(hi >= lo) || n < 2) throw std::invalid_argument("bad log grid");
  std::vector<double> out(n);
  double llo = std::log(lo), lhi = std::log(hi);
  for (size_t i = 0; i < n; ++i)
    out[i] = std::exp(llo + (lhi - llo) * static_cast<double>(i) / static_cast<double>(n - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

// ---- deterministic sampling --------------------------------------------------
// All simulator randomness flows through Rng so identical seeds reproduce
// identical byte streams regardless of platform stdlib distributions.

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive.
  uint64_t uniform_u64(uint64_t lo, uint64_t hi) {
    if (hi <= lo) return lo;
    return lo + gen_() % (hi - lo + 1);
  }

  size_t uniform_index(size_t n) { return static_cast<size_t>(uniform_u64(0, n - 1)); }

  bool bernoulli(double p) { return uniform01() < p; }

  double exponential(double mean) { return -mean * std::log1p(-uniform01()); }

  // Log-uniform integer over [lo, hi], lo >= 1.
  int64_t log_uniform_i64(int64_t lo, int64_t hi) {
    if (hi <= lo) return lo;
    double v = std::exp(std::log(static_cast<double>(lo)) +
                        uniform01() * (std::log(static_cast<double>(hi)) -
                                       std::log(static_cast<double>(lo))));
    auto r = static_cast<int64_t>(std::llround(v));
    return std::clamp(r, lo, hi);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace blocksonar
