// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Candidate pool selection and phase segmentation of the history window.
//
// The adjacent-step JSD curve over the window is U-shaped: an unstable
// early phase (PSAP) drops into a semantic-anchoring valley (SAP) and rises
// again through the expressive phase (EDP). Only the valley onward is
// aggregated.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"

namespace resdec {

/// Top-k tokens of `current` (ties by ascending id). k larger than the
/// domain is clamped.
inline CandidatePool candidate_pool(const LogitVector& current, std::size_t k) {
  if (k < 2) throw ConfigError("pool size must be >= 2");
  CandidatePool pool;
  pool.k = k;
  for (std::size_t i : top_indices(current, k)) pool.tokens.push_back(current.token(i));
  if (pool.empty()) throw EmptyPool("candidate_pool: no finite logits");
  return pool;
}

/// js_divergence between consecutive distributions.
inline std::vector<double> jsd_curve(std::span<const DenseDistribution> dists) {
  std::vector<double> curve;
  if (dists.size() < 2) return curve;
  curve.reserve(dists.size() - 1);
  for (std::size_t j = 0; j + 1 < dists.size(); ++j) curve.push_back(js_divergence(dists[j], dists[j + 1]));
  return curve;
}

inline std::vector<DenseDistribution> pool_distributions(std::span<const RecordRef> window, const CandidatePool& pool) {
  if (pool.empty()) throw EmptyPool("empty candidate pool");
  std::vector<DenseDistribution> dists;
  dists.reserve(window.size());
  for (const StepRecord& rec : window) dists.push_back(restrict_renormalize(pool_logits(rec, pool), pool));
  return dists;
}

/// Entry j is the JSD between the pool distributions of window[j] and window[j+1].
inline std::vector<double> jsd_curve(std::span<const RecordRef> window, const CandidatePool& pool) {
  if (window.size() < 2) throw DimensionError("jsd_curve needs at least two records");
  return jsd_curve(pool_distributions(window, pool));
}

/// 3-point moving average; the end points average their two available values.
inline std::vector<double> smooth3(std::span<const double> curve) {
  std::vector<double> out(curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(curve.size() - 1, i + 1);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += curve[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

/// Index of the global minimum, ties to the latest index.
inline std::size_t locate_valley(std::span<const double> curve, bool smooth) {
  if (curve.empty()) throw DimensionError("locate_valley: empty curve");
  std::vector<double> smoothed;
  std::span<const double> c = curve;
  if (smooth) {
    smoothed = smooth3(curve);
    c = smoothed;
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < c.size(); ++j) {
    if (c[j] <= c[best]) best = j;
  }
  return best;
}

/// Inclusive range of window offsets.
struct IndexRange {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t size() const noexcept { return last - first + 1; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Records from the valley onward (SAP + EDP).
///
/// Curve index j is the transition into record j+1; a valley at j starts the
/// range at record j so the whole minimal pair is kept.
inline IndexRange aggregation_window(std::size_t window_size, std::size_t valley) {
  if (window_size == 0) throw EmptyHistory("aggregation_window: empty window");
  return {std::min(valley, window_size - 1), window_size - 1};
}

enum class Smoothing { automatic, on, off };

struct PhaseSegmentation {
  std::vector<double> jsd_curve;
  std::size_t valley_index = 0;
  IndexRange delta;
  bool smoothed = false;
  /// Fewer than three records: no valley search, the whole window is used.
  bool skipped = false;
};

inline PhaseSegmentation segment_from_curve(std::vector<double> curve, std::size_t window_size, Smoothing smoothing) {
  PhaseSegmentation seg;
  seg.jsd_curve = std::move(curve);
  if (window_size < 3) {
    seg.skipped = true;
    seg.delta = {0, window_size - 1};
    return seg;
  }
  seg.smoothed = smoothing == Smoothing::on || (smoothing == Smoothing::automatic && window_size >= 4);
  seg.valley_index = locate_valley(seg.jsd_curve, seg.smoothed);
  seg.delta = aggregation_window(window_size, seg.valley_index);
  return seg;
}

inline PhaseSegmentation segment(std::span<const RecordRef> window, const CandidatePool& pool,
                                 Smoothing smoothing = Smoothing::automatic) {
  if (window.empty()) throw EmptyHistory("segment: empty window");
  std::vector<double> curve;
  if (window.size() >= 2) curve = jsd_curve(window, pool);
  return segment_from_curve(std::move(curve), window.size(), smoothing);
}

/// Which part of the segmented window feeds the residual.
enum class WindowSelection { sap_edp, full, psap_only, sap_only, edp_only };

/// Maps a segmentation onto record offsets for the chosen selection.
/// PSAP is the records before the valley (record 0 alone when the valley is
/// at 0); SAP is the minimal-transition pair; EDP is everything after it.
inline IndexRange select_range(const PhaseSegmentation& seg, std::size_t window_size, WindowSelection sel) {
  const std::size_t last = window_size - 1;
  if (seg.skipped) return {0, last};
  const std::size_t v = seg.valley_index;
  switch (sel) {
    case WindowSelection::sap_edp: return seg.delta;
    case WindowSelection::full: return {0, last};
    case WindowSelection::psap_only: return {0, v == 0 ? 0 : v - 1};
    case WindowSelection::sap_only: return {v, std::min(v + 1, last)};
    case WindowSelection::edp_only: return {std::min(v + 1, last), last};
  }
  return seg.delta;
}

}  // namespace resdec
