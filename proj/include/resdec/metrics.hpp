// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/math.hpp"
#include "resdec/segmentation.hpp"
#include "resdec/trace.hpp"

namespace resdec {

/// Binary confusion counts; "positive" is whatever the caller designates (e.g. "yes").
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(bool predicted_positive, bool actual_positive) noexcept {
    if (predicted_positive) {
      (actual_positive ? tp : fp) += 1;
    } else {
      (actual_positive ? fn : tn) += 1;
    }
  }
  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  double accuracy() const noexcept {
    return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total());
  }
  double precision() const noexcept { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const noexcept { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  /// 0 when nothing is predicted positive or nothing is positive.
  double f1() const noexcept {
    if (tp + fp == 0 || tp + fn == 0) return 0.0;
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

struct LatencyStats {
  double mean = 0.0, p50 = 0.0, p95 = 0.0;
  std::size_t count = 0;
};

/// Nearest-rank percentiles over per-token microseconds.
inline LatencyStats latency_stats(std::vector<double> samples) {
  LatencyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  double sum = 0.0;
  for (double x : samples) sum += x;
  s.mean = sum / static_cast<double>(samples.size());
  const auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(idx, 1, samples.size()) - 1];
  };
  s.p50 = rank(0.50);
  s.p95 = rank(0.95);
  return s;
}

/// Argmax over `answer_set` of a record's logits (unretained tokens read as the
/// fill value). Ties go to the lowest id.
inline TokenId answer_argmax(const StepRecord& rec, std::span<const TokenId> answer_set) {
  if (answer_set.empty()) throw DimensionError("empty answer set");
  TokenId best = answer_set.front();
  double best_score = kNegInf;
  bool first = true;
  for (TokenId t : answer_set) {
    const double s = rec.lookup(t).value_or(rec.fill_logit());
    if (first || s > best_score || (s == best_score && t < best)) {
      best = t;
      best_score = s;
      first = false;
    }
  }
  return best;
}

struct OffsetAccuracy {
  /// offset (negative) -> accuracy over the traces that have that step.
  std::map<int, double> accuracy;
  std::map<int, std::size_t> counts;
  std::size_t skipped = 0;
};

/// For each d in -window..-1: fraction of labelled traces whose argmax over
/// `answer_set` at step answer_step + d equals the label.
inline OffsetAccuracy offset_accuracy(std::span<const Trace> traces, std::span<const TokenId> answer_set, int window) {
  OffsetAccuracy out;
  std::map<int, std::size_t> hits;
  for (const auto& tr : traces) {
    if (!tr.label || !tr.answer_step) {
      ++out.skipped;
      continue;
    }
    for (int d = -window; d <= -1; ++d) {
      const StepRecord* rec = tr.find_step(*tr.answer_step + d);
      if (rec == nullptr) continue;
      ++out.counts[d];
      hits[d] += answer_argmax(*rec, answer_set) == *tr.label;
    }
  }
  for (const auto& [d, n] : out.counts) out.accuracy[d] = static_cast<double>(hits[d]) / static_cast<double>(n);
  return out;
}

/// Adjacent-step JSD curve of the `window` records before the final step,
/// restricted to the final step's top-`pool_k` pool.
inline std::vector<double> trace_jsd_curve(const Trace& trace, std::size_t window, std::size_t pool_k) {
  if (trace.records.size() < 3) throw DimensionError("trace too short for a JSD curve");
  const StepRecord& last = trace.records.back();
  CandidatePool pool;
  pool.k = pool_k;
  for (std::size_t i = 0; i < std::min(pool_k, last.entries.size()); ++i) pool.tokens.push_back(last.entries[i].token);
  const std::size_t n = std::min(window, trace.records.size() - 1);
  std::vector<RecordRef> refs;
  for (std::size_t i = trace.records.size() - 1 - n; i + 1 < trace.records.size(); ++i) refs.emplace_back(trace.records[i]);
  return jsd_curve(refs, pool);
}

struct JsdProfile {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::size_t traces = 0;
};

/// Per-position mean and population stddev of the curves; all curves must
/// have the same length.
inline JsdProfile jsd_profile(std::span<const std::vector<double>> curves) {
  JsdProfile p;
  if (curves.empty()) return p;
  const std::size_t n = curves.front().size();
  p.mean.assign(n, 0.0);
  p.stddev.assign(n, 0.0);
  for (const auto& c : curves) {
    if (c.size() != n) throw DimensionError("JSD curves of different lengths");
    for (std::size_t i = 0; i < n; ++i) p.mean[i] += c[i];
  }
  const auto count = static_cast<double>(curves.size());
  for (double& m : p.mean) m /= count;
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < n; ++i) p.stddev[i] += (c[i] - p.mean[i]) * (c[i] - p.mean[i]);
  }
  for (double& s : p.stddev) s = std::sqrt(s / count);
  p.traces = curves.size();
  return p;
}

/// Raw-curve argmin; ties go to the latest index.
inline std::size_t curve_argmin(std::span<const double> curve) { return locate_valley(curve, false); }

}  // namespace resdec
