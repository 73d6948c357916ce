// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"
#include "resdec/residual.hpp"
#include "resdec/sampling.hpp"
#include "resdec/segmentation.hpp"

namespace resdec {

/// Scale of the current-step stream entering the fusion.
/// `normalized` (default) log-softmaxes it first; `raw` fuses the backend's
/// scores as given and is kept only for comparison runs.
enum class FusionScale { normalized, raw };

struct DecodeConfig {
  double alpha = 0.5;
  double beta = 0.1;
  std::size_t window_w = 8;
  std::size_t pool_k = 256;
  std::size_t top_m = 1024;
  Strategy strategy = Greedy{};
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = 64;
  std::optional<TokenId> eos_token;
  Aggregation aggregation;
  WindowSelection selection = WindowSelection::sap_edp;
  Smoothing smoothing = Smoothing::automatic;
  ConfidenceReading confidence_reading = ConfidenceReading::as_written;
  FusionScale fusion = FusionScale::normalized;
  bool keep_diagnostics = true;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
    if (window_w < 2) throw ConfigError("window must be >= 2");
    if (pool_k < 2) throw ConfigError("pool size must be >= 2");
    if (top_m < pool_k) throw ConfigError("top-m must be >= pool size");
    if (aggregation.kind == Aggregation::Kind::top_n_confident && aggregation.n < 1) {
      throw ConfigError("top-n aggregation needs n >= 1");
    }
    resdec::validate(strategy);
  }
};

/// (1 - alpha) * current + alpha * residual on pool tokens; identity elsewhere.
inline LogitVector fuse(const LogitVector& current, const ResidualSignal& residual, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  if (alpha == 0.0) return current;
  LogitVector out = current;
  const auto& tokens = residual.pool.tokens;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto pos = current.find(tokens[j]);
    if (!pos) throw DimensionError("residual pool token " + std::to_string(tokens[j]) + " outside the current vocabulary");
    out[*pos] = (1.0 - alpha) * current[*pos] + alpha * residual.values[j];
  }
  return out;
}

namespace detail {

// Slack on the plausibility threshold, in nats, so that p == beta * max
// survives rounding of the log-space comparison.
inline constexpr double kMaskSlack = 1e-12;

inline double mask_threshold(double max_logit, double beta) {
  return beta == 0.0 ? kNegInf : max_logit + std::log(beta) - kMaskSlack;
}

}  // namespace detail

/// Tokens whose probability under `current` is at least beta times the
/// largest one, ascending by id. `current` must be the unfused distribution.
inline std::vector<TokenId> plausibility_mask(const LogitVector& current, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
  std::vector<TokenId> head;
  if (beta == 0.0) {
    for (std::size_t i = 0; i < current.size(); ++i) head.push_back(current.token(i));
  } else {
    const double threshold = detail::mask_threshold(detail::finite_max(current.scores()), beta);
    for (std::size_t i = 0; i < current.size(); ++i) {
      if (current[i] >= threshold) head.push_back(current.token(i));
    }
  }
  std::sort(head.begin(), head.end());
  return head;
}

/// Sets every token outside `head` to -inf.
inline LogitVector apply_mask(const LogitVector& fused, std::span<const TokenId> head) {
  if (head.empty()) throw MaskError("plausibility mask is empty");
  std::vector<TokenId> sorted(head.begin(), head.end());
  std::sort(sorted.begin(), sorted.end());
  LogitVector out = fused;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::binary_search(sorted.begin(), sorted.end(), out.token(i))) out[i] = kNegInf;
  }
  return out;
}

/// Regular decoding of one step: mask + sample on the normalized current logits.
inline TokenId regular_choice(const LogitVector& normalized, double beta, const Strategy& strategy, double u) {
  return sample(apply_mask(normalized, plausibility_mask(normalized, beta)), strategy, u);
}

struct StepDiagnostics {
  std::int64_t step = 0;
  TokenId token = 0;
  /// What regular decoding (same mask, same draw) would have emitted.
  TokenId regular_token = 0;
  /// No history was available; the step was decoded regularly.
  bool fallback = false;
  std::size_t pool_size = 0;
  std::size_t window_size = 0;
  PhaseSegmentation segmentation;
  std::vector<double> weights;
  std::vector<std::int64_t> source_steps;
  bool degenerate_weights = false;
  double latency_us = 0.0;
};

struct StepOutcome {
  TokenId token = 0;
  TokenId regular_token = 0;
  bool fallback = false;
};

/// One decode session: history, emitted tokens and the seeded draw stream.
///
/// Each `step` runs log-softmax, candidate pool, history window, JSD
/// segmentation, residual aggregation, fusion, plausibility masking against
/// the original distribution and sampling, then records the step.
class Decoder {
 public:
  explicit Decoder(DecodeConfig cfg) : cfg_(std::move(cfg)), history_(cfg_.window_w, cfg_.window_w) {
    cfg_.validate();
  }

  const DecodeConfig& config() const noexcept { return cfg_; }
  const HistoryBuffer& history() const noexcept { return history_; }
  const std::vector<TokenId>& emitted() const noexcept { return emitted_; }
  const std::vector<StepDiagnostics>& diagnostics() const noexcept { return diagnostics_; }
  std::int64_t next_step() const noexcept { return static_cast<std::int64_t>(emitted_.size()) + 1; }

  /// Adds a prompt-position record used as history for early steps.
  void add_prefill(StepRecord rec) {
    if (!emitted_.empty()) throw OrderingError("prefill history after generation started");
    rec.validate();
    history_.push(std::move(rec));
  }

  StepOutcome step(const LogitVector& current_raw) {
    const std::int64_t t = next_step();
    const double u = step_uniform(cfg_.seed, t);

    const LogitVector normalized = log_softmax(current_raw);
    const std::vector<std::size_t> top = top_indices(normalized, cfg_.top_m);
    CandidatePool pool;
    pool.k = cfg_.pool_k;
    for (std::size_t i = 0; i < std::min(cfg_.pool_k, top.size()); ++i) pool.tokens.push_back(normalized.token(top[i]));

    StepDiagnostics diag;
    diag.step = t;
    diag.pool_size = pool.size();

    const LogitVector& base = cfg_.fusion == FusionScale::raw ? current_raw : normalized;
    std::optional<LogitVector> fused_storage;
    const LogitVector* fused = &base;
    if (history_.size() + history_.prefill_size() == 0 || cfg_.alpha == 0.0) {
      diag.fallback = history_.size() + history_.prefill_size() == 0;
    } else {
      const ResidualSignal residual = compute_residual(t, pool, diag);
      fused_storage = fuse(base, residual, cfg_.alpha);
      fused = &*fused_storage;
    }

    const std::vector<TokenId> head = plausibility_mask(normalized, cfg_.beta);
    StepOutcome out;
    out.fallback = diag.fallback;
    if (std::holds_alternative<Greedy>(cfg_.strategy)) {
      out.token = masked_argmax(*fused, head);
      out.regular_token = masked_argmax(normalized, head);
    } else {
      out.token = sample(apply_mask(*fused, head), cfg_.strategy, u);
      out.regular_token = fused == &normalized ? out.token : sample(apply_mask(normalized, head), cfg_.strategy, u);
    }

    std::vector<TokenLogit> entries;
    entries.reserve(top.size());
    for (std::size_t i : top) entries.push_back({normalized.token(i), normalized[i]});
    StepRecord rec;
    rec.step_index = t;
    rec.origin = Origin::generated;
    rec.entries = std::move(entries);
    rec.floor_logit = rec.entries.empty() ? 0.0 : rec.entries.back().logit;
    rec.chosen = out.token;
    history_.push(std::move(rec));
    emitted_.push_back(out.token);

    if (cfg_.keep_diagnostics) {
      diag.token = out.token;
      diag.regular_token = out.regular_token;
      diagnostics_.push_back(std::move(diag));
    }
    return out;
  }

  /// Records the wall time of the most recent step in its diagnostics.
  void set_last_latency(double us) {
    if (!diagnostics_.empty()) diagnostics_.back().latency_us = us;
  }

 private:
  ResidualSignal compute_residual(std::int64_t t, const CandidatePool& pool, StepDiagnostics& diag) {
    const std::vector<RecordRef> window = history_.window(t, cfg_.window_w);
    diag.window_size = window.size();

    // Pool-slot lookup shared by every record of the window.
    std::size_t bound = 0;
    for (TokenId tok : pool.tokens) bound = std::max(bound, static_cast<std::size_t>(tok) + 1);
    if (slot_.size() < bound) slot_.resize(bound, -1);
    for (std::size_t j = 0; j < pool.size(); ++j) slot_[static_cast<std::size_t>(pool.tokens[j])] = static_cast<std::int32_t>(j);

    std::vector<std::vector<double>> values(window.size());
    std::vector<DenseDistribution> dists;
    dists.reserve(window.size());
    std::vector<std::int64_t> steps;
    for (std::size_t r = 0; r < window.size(); ++r) {
      const StepRecord& rec = window[r];
      auto& v = values[r];
      v.assign(pool.size(), rec.fill_logit());
      for (const auto& e : rec.entries) {
        const auto tok = static_cast<std::size_t>(e.token);
        if (tok < slot_.size() && slot_[tok] >= 0) v[static_cast<std::size_t>(slot_[tok])] = e.logit;
      }
      dists.emplace_back(softmax(v));
      steps.push_back(rec.step_index);
    }
    for (TokenId tok : pool.tokens) slot_[static_cast<std::size_t>(tok)] = -1;

    diag.segmentation = segment_from_curve(jsd_curve(dists), window.size(), cfg_.smoothing);
    IndexRange range = select_range(diag.segmentation, window.size(), cfg_.selection);
    if (cfg_.aggregation.kind == Aggregation::Kind::top_n_confident) range = {0, window.size() - 1};

    std::vector<std::vector<double>> picked_values;
    std::vector<double> confs;
    std::vector<std::int64_t> picked_steps;
    for (std::size_t r = range.first; r <= range.last; ++r) {
      picked_values.push_back(std::move(values[r]));
      confs.push_back(confidence(dists[r]));
      picked_steps.push_back(steps[r]);
    }
    ResidualSignal sig = detail::aggregate_residual(picked_values, confs, picked_steps, pool, cfg_.aggregation, t,
                                                    cfg_.confidence_reading);
    diag.weights = sig.weights;
    diag.source_steps = sig.source_steps;
    diag.degenerate_weights = sig.degenerate_weights;
    return sig;
  }

  static TokenId masked_argmax(const LogitVector& v, std::span<const TokenId> head) {
    if (head.empty()) throw MaskError("plausibility mask is empty");
    std::optional<TokenId> best;
    double best_score = kNegInf;
    const auto consider = [&](TokenId tok, double s) {
      if (!std::isfinite(s)) return;
      if (!best || s > best_score || (s == best_score && tok < *best)) {
        best = tok;
        best_score = s;
      }
    };
    if (v.is_dense()) {
      for (TokenId tok : head) {
        if (static_cast<std::size_t>(tok) < v.size()) consider(tok, v[static_cast<std::size_t>(tok)]);
      }
    } else {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::binary_search(head.begin(), head.end(), v.token(i))) consider(v.token(i), v[i]);
      }
    }
    if (!best) throw DegenerateDistribution("no finite logit inside the plausibility mask");
    return *best;
  }

  DecodeConfig cfg_;
  HistoryBuffer history_;
  std::vector<TokenId> emitted_;
  std::vector<StepDiagnostics> diagnostics_;
  std::vector<std::int32_t> slot_;
};

}  // namespace resdec
