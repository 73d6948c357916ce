// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"

namespace resdec {

/// How historical records are weighted into the residual signal.
struct Aggregation {
  enum class Kind {
    confidence,       ///< C_i / sum C_j (the default)
    uniform,          ///< plain mean
    distance_decay,   ///< proportional to 1 / (t - i)
    top_n_confident,  ///< the n most confident records, confidence-weighted
  };
  Kind kind = Kind::confidence;
  std::size_t n = 4;

  friend bool operator==(const Aggregation&, const Aggregation&) = default;
};

/// confidence | uniform | decay | topn:<n>
inline Aggregation parse_aggregation(std::string_view text) {
  Aggregation a;
  if (text == "confidence") return a;
  if (text == "uniform") {
    a.kind = Aggregation::Kind::uniform;
  } else if (text == "decay") {
    a.kind = Aggregation::Kind::distance_decay;
  } else if (text.starts_with("topn:")) {
    const std::string arg(text.substr(5));
    std::size_t used = 0;
    long n = 0;
    try {
      n = std::stol(arg, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (arg.empty() || used != arg.size() || n < 1) throw ConfigError("bad top-n count in '" + std::string(text) + "'");
    a.kind = Aggregation::Kind::top_n_confident;
    a.n = static_cast<std::size_t>(n);
  } else {
    throw ConfigError("unknown aggregation '" + std::string(text) + "'");
  }
  return a;
}

inline std::string to_string(const Aggregation& a) {
  switch (a.kind) {
    case Aggregation::Kind::confidence: return "confidence";
    case Aggregation::Kind::uniform: return "uniform";
    case Aggregation::Kind::distance_decay: return "decay";
    case Aggregation::Kind::top_n_confident: return "topn:" + std::to_string(a.n);
  }
  return "confidence";
}

/// Reading of the per-step confidence used as a weight.
///
/// `as_written` is the mean negative log-probability over the pool, which
/// grows as the pool distribution concentrates. `geometric_mean` weights by
/// exp(-C), the geometric-mean pool probability, which orders steps the
/// other way round. It is experimental and off by default.
enum class ConfidenceReading { as_written, geometric_mean };

/// Mean negative log-probability of a pool distribution. Always >= ln |pool|.
inline double confidence(const DenseDistribution& pool_dist) {
  if (pool_dist.size() == 0) throw EmptyPool("confidence of an empty pool");
  double s = 0.0;
  for (double p : pool_dist.probs()) {
    if (p <= 0.0) throw SupportMismatch("confidence: zero pool probability");
    s -= std::log(p);
  }
  return s / static_cast<double>(pool_dist.size());
}

inline double confidence(const StepRecord& rec, const CandidatePool& pool) {
  if (pool.empty()) throw EmptyPool("confidence: empty candidate pool");
  return confidence(restrict_renormalize(pool_logits(rec, pool), pool));
}

struct NormalizedWeights {
  std::vector<double> weights;
  /// All inputs were zero; uniform weights were substituted.
  bool degenerate = false;
};

inline NormalizedWeights normalize_weights(std::span<const double> raw) {
  if (raw.empty()) throw EmptyHistory("normalize_weights: no entries");
  double sum = 0.0;
  for (double c : raw) {
    if (!std::isfinite(c) || c < 0.0) throw DimensionError("weights must be finite and nonnegative");
    sum += c;
  }
  NormalizedWeights out;
  out.weights.resize(raw.size());
  if (sum == 0.0) {
    out.degenerate = true;
    std::fill(out.weights.begin(), out.weights.end(), 1.0 / static_cast<double>(raw.size()));
    return out;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) out.weights[i] = raw[i] / sum;
  return out;
}

/// Confidence-weighted aggregate of historical pool logits.
struct ResidualSignal {
  CandidatePool pool;
  LogitVector values;
  std::vector<double> weights;
  std::vector<std::int64_t> source_steps;
  bool degenerate_weights = false;
};

namespace detail {

/// Core of the residual computation on precomputed per-record inputs.
/// `pool_values[i]` holds record i's pool logits in pool order.
inline ResidualSignal aggregate_residual(std::span<const std::vector<double>> pool_values,
                                         std::span<const double> confidences,
                                         std::span<const std::int64_t> steps, const CandidatePool& pool,
                                         const Aggregation& agg, std::int64_t current_step,
                                         ConfidenceReading reading) {
  const std::size_t n = pool_values.size();
  if (n == 0) throw EmptyHistory("residual over an empty aggregation window");
  std::vector<std::size_t> chosen(n);
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});

  auto weight_of = [&](std::size_t i) {
    return reading == ConfidenceReading::as_written ? confidences[i] : std::exp(-confidences[i]);
  };

  std::vector<double> raw;
  switch (agg.kind) {
    case Aggregation::Kind::confidence:
      for (std::size_t i = 0; i < n; ++i) raw.push_back(weight_of(i));
      break;
    case Aggregation::Kind::uniform:
      raw.assign(n, 1.0);
      break;
    case Aggregation::Kind::distance_decay:
      for (std::size_t i = 0; i < n; ++i) {
        const auto dist = current_step - steps[i];
        if (dist < 1) throw OrderingError("distance decay needs records strictly before the current step");
        raw.push_back(1.0 / static_cast<double>(dist));
      }
      break;
    case Aggregation::Kind::top_n_confident: {
      if (agg.n == 0) throw ConfigError("top-n aggregation needs n >= 1");
      std::vector<std::size_t> order = chosen;
      // Most confident first; ties go to the more recent record.
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (weight_of(a) != weight_of(b)) return weight_of(a) > weight_of(b);
        return a > b;
      });
      order.resize(std::min(agg.n, n));
      std::sort(order.begin(), order.end());
      chosen = order;
      for (std::size_t i : chosen) raw.push_back(weight_of(i));
      break;
    }
  }

  NormalizedWeights w = normalize_weights(raw);
  ResidualSignal sig;
  sig.pool = pool;
  sig.weights = std::move(w.weights);
  sig.degenerate_weights = w.degenerate;
  std::vector<double> values(pool.size(), 0.0);
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    const auto& v = pool_values[chosen[c]];
    const double wc = sig.weights[c];
    for (std::size_t j = 0; j < values.size(); ++j) values[j] += wc * v[j];
    sig.source_steps.push_back(steps[chosen[c]]);
  }
  sig.values = LogitVector::over(pool.tokens, std::move(values));
  return sig;
}

}  // namespace detail

/// Residual logits over the pool from the records of the aggregation window.
/// `current_step` is only consulted by distance decay.
inline ResidualSignal residual_logits(std::span<const RecordRef> delta, const CandidatePool& pool,
                                      const Aggregation& agg = {}, std::int64_t current_step = 0,
                                      ConfidenceReading reading = ConfidenceReading::as_written) {
  if (delta.empty()) throw EmptyHistory("residual_logits: empty aggregation window");
  if (pool.empty()) throw EmptyPool("residual_logits: empty candidate pool");
  std::vector<std::vector<double>> values;
  std::vector<double> confs;
  std::vector<std::int64_t> steps;
  for (const StepRecord& rec : delta) {
    LogitVector pv = pool_logits(rec, pool);
    confs.push_back(confidence(restrict_renormalize(pv, pool)));
    values.emplace_back(pv.scores().begin(), pv.scores().end());
    steps.push_back(rec.step_index);
  }
  return detail::aggregate_residual(values, confs, steps, pool, agg, current_step, reading);
}

}  // namespace resdec
