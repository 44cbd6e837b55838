// Wall-clock latency measurement: warmup runs, then timed repetitions with
// median/p95 over the sample.

#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <vector>

namespace dconv {

struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  int reps = 0;
};

inline double percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * (sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - lo;
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

inline LatencyStats measure_latency(const std::function<void()>& fn, int warmup, int reps) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  LatencyStats s;
  s.reps = reps;
  s.min_ms = samples.front();
  s.max_ms = samples.back();
  s.median_ms = percentile(samples, 0.5);
  s.p95_ms = percentile(samples, 0.95);
  return s;
}

}  // namespace dconv
