// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Deterministic generators for language-prior hallucination traces.
//
// A synthetic trace has guide_len history steps followed by one answer step.
// The first ceil(guide_len / 2) steps churn (a different background token
// dominates each step, and the answer-vs-distractor margin ramps up); the
// rest hold the history-favoured token at a steady margin, with a template
// token drifting upward over the final half of them. At the answer step the
// current logits favour the other token.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"
#include "resdec/sampling.hpp"
#include "resdec/source.hpp"
#include "resdec/trace.hpp"

namespace resdec {

/// Scenario of a synthetic trial.
enum class TrialKind {
  /// History anchors on the answer; the answer step boosts the distractor.
  hallucination,
  /// History anchors on the distractor; the answer step legitimately moves to
  /// the answer. Relying too much on history gets this one wrong.
  context_shift,
};

struct SyntheticTaskSpec {
  std::size_t vocab_size = 16;
  TokenId answer_token = 3;
  TokenId hallucination_token = 7;
  std::size_t guide_len = 8;
  /// Lead (nats) of the history-favoured token during the anchored steps.
  double sap_margin = 3.0;
  /// Lead of the distractor over the answer at the answer step (hallucination).
  double injection_delta = 2.0;
  /// Lead of the answer over the distractor at the answer step (context shift).
  double shift_margin = 1.5;
  double noise_sigma = 0.1;
  double psap_churn = 2.0;
  /// Per-step rise of the template token over the expressive steps.
  double edp_drift = 1.5;
  std::size_t top_m = 12;
  TrialKind kind = TrialKind::hallucination;

  std::size_t psap_steps() const noexcept { return (guide_len + 1) / 2; }
  std::int64_t answer_step() const noexcept { return static_cast<std::int64_t>(guide_len) + 1; }
};

/// Strictness of spec validation. `structural` only rejects specs that
/// cannot be generated; `guaranteed` also enforces the margins under which
/// ResDec(alpha=0.5, beta=0.1) provably recovers the answer.
enum class SpecCheck { guaranteed, structural };

inline constexpr double kDefaultBeta = 0.1;

inline void validate(const SyntheticTaskSpec& s, SpecCheck check = SpecCheck::guaranteed) {
  const auto in_vocab = [&](TokenId t) { return t >= 0 && static_cast<std::size_t>(t) < s.vocab_size; };
  if (s.vocab_size < 4) throw SpecError("synthetic vocabulary needs at least 4 tokens");
  if (!in_vocab(s.answer_token) || !in_vocab(s.hallucination_token)) throw SpecError("answer/hallucination id outside vocab");
  if (s.answer_token == s.hallucination_token) throw SpecError("answer and hallucination tokens must differ");
  if (s.guide_len < 4) throw SpecError("guide_len must be >= 4");
  if (s.top_m < 2) throw SpecError("top_m must be >= 2");
  if (!(s.sap_margin > 0.0) || !(s.psap_churn > 0.0) || !(s.noise_sigma >= 0.0) || !(s.edp_drift >= 0.0)) {
    throw SpecError("margins, churn and drift must be positive and noise nonnegative");
  }
  if (!(s.injection_delta >= 0.0) || !(s.shift_margin >= 0.0)) throw SpecError("answer-step margins must be >= 0");
  if (check == SpecCheck::structural) return;
  if (s.kind != TrialKind::hallucination) throw SpecError("only hallucination trials carry a construction guarantee");
  // alpha / (1 - alpha) == 1 at the default alpha = 0.5.
  if (!(s.injection_delta < s.sap_margin)) throw SpecError("injection_delta must be below sap_margin");
  if (!(s.noise_sigma < 0.25 * (s.sap_margin - s.injection_delta))) {
    throw SpecError("noise_sigma must be below 0.25 * (sap_margin - injection_delta)");
  }
  if (!(s.injection_delta < std::log(1.0 / kDefaultBeta))) {
    throw SpecError("injection_delta must be below ln(1/beta) or the plausibility mask drops the answer");
  }
}

namespace detail {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t bits() { return splitmix64(state_); }
  double uniform() { return to_unit(bits()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  /// Normal draw truncated to [-2 sigma, 2 sigma] by rejection.
  double bounded_normal(double sigma) {
    if (sigma == 0.0) return 0.0;
    for (;;) {
      const double u1 = 1.0 - uniform();
      const double u2 = uniform();
      const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      if (std::abs(z) <= 2.0) return sigma * z;
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace detail

/// Generates one synthetic trace. Bitwise reproducible per (spec, seed).
inline Trace generate_trace(const SyntheticTaskSpec& spec, std::uint64_t seed,
                            SpecCheck check = SpecCheck::guaranteed) {
  validate(spec, check);
  detail::Rng rng(derive_seed(seed, 0x5EED));
  const std::size_t V = spec.vocab_size;
  const TokenId answer = spec.answer_token;
  const TokenId distractor = spec.hallucination_token;
  const bool shift = spec.kind == TrialKind::context_shift;
  const TokenId anchored = shift ? distractor : answer;
  const TokenId trailing = shift ? answer : distractor;

  std::vector<TokenId> others;
  for (std::size_t t = 0; t < V; ++t) {
    if (static_cast<TokenId>(t) != answer && static_cast<TokenId>(t) != distractor) others.push_back(static_cast<TokenId>(t));
  }
  std::vector<double> background(V, 0.0);
  for (std::size_t r = 0; r < others.size(); ++r) background[static_cast<std::size_t>(others[r])] = -4.0 - 0.5 * static_cast<double>(r);
  const TokenId template_token = others.front();
  const std::size_t churn_choices = std::max<std::size_t>(1, std::min<std::size_t>(5, others.size() - 1));

  const std::size_t P = spec.psap_steps();
  const std::size_t S = spec.guide_len - P;
  const std::size_t E = S / 2;

  Trace trace;
  trace.vocab_size = V;
  trace.top_m = std::min(spec.top_m, V);
  trace.source = shift ? "synthetic/context-shift" : "synthetic/hallucination";
  trace.label = answer;
  trace.answer_step = spec.answer_step();

  std::size_t previous_churn = others.size();
  for (std::size_t step = 1; step <= spec.guide_len + 1; ++step) {
    std::vector<double> logits = background;
    const bool is_answer = step == spec.guide_len + 1;
    if (is_answer) {
      logits[static_cast<std::size_t>(answer)] = 0.0;
      logits[static_cast<std::size_t>(distractor)] = shift ? -spec.shift_margin : spec.injection_delta;
    } else if (step <= P) {
      // Margin of the anchored token ramps from -m (P-1)/P up to +m (P-1)/P.
      const double margin = spec.sap_margin * (2.0 * static_cast<double>(step) - static_cast<double>(P) - 1.0) /
                            static_cast<double>(P);
      logits[static_cast<std::size_t>(anchored)] = 0.0;
      logits[static_cast<std::size_t>(trailing)] = -margin;
      std::size_t pick = 1 + rng.below(churn_choices);
      if (pick == previous_churn) pick = 1 + (pick % churn_choices);
      previous_churn = pick;
      logits[static_cast<std::size_t>(others[pick])] = spec.psap_churn;
    } else {
      logits[static_cast<std::size_t>(anchored)] = 0.0;
      logits[static_cast<std::size_t>(trailing)] = -spec.sap_margin;
      const std::size_t into = step - P;  // 1..S
      if (into > S - E) {
        logits[static_cast<std::size_t>(template_token)] += spec.edp_drift * static_cast<double>(into - (S - E));
      }
    }
    for (std::size_t t = 0; t < V; ++t) {
      const bool pinned = is_answer && (static_cast<TokenId>(t) == answer || static_cast<TokenId>(t) == distractor);
      const double noise = rng.bounded_normal(spec.noise_sigma);
      if (!pinned) logits[t] += noise;
    }
    const LogitVector normalized = log_softmax(LogitVector::dense(std::move(logits)));
    trace.records.push_back(truncate_to_record(static_cast<std::int64_t>(step), Origin::generated, normalized, trace.top_m));
  }
  return trace;
}

/// Per-trial randomization of a base spec.
struct TaskSampler {
  enum class Mode {
    fixed,        ///< every trial uses the base spec
    robust,       ///< injection_delta ~ U[lo, hi] * sap_margin
    mixed,        ///< hallucination trials mixed with context-shift trials
    mask_stress,  ///< context shifts where history backs an implausible token
  };
  Mode mode = Mode::fixed;
  SyntheticTaskSpec base;
  double delta_lo = 0.5;
  double delta_hi = 0.95;
  /// Fraction of hallucination trials in `mixed` mode.
  double hallucination_fraction = 0.4;
  /// Swap answer/distractor roles on a seeded coin (balances yes/no labels).
  bool balance_labels = true;
};

inline SyntheticTaskSpec sample_trial_spec(const TaskSampler& sampler, std::uint64_t trial_seed) {
  detail::Rng rng(derive_seed(trial_seed, 0x7A5C));
  SyntheticTaskSpec s = sampler.base;
  if (sampler.balance_labels && (rng.bits() & 1U)) std::swap(s.answer_token, s.hallucination_token);
  switch (sampler.mode) {
    case TaskSampler::Mode::fixed:
      break;
    case TaskSampler::Mode::robust:
      s.kind = TrialKind::hallucination;
      s.injection_delta = rng.uniform(sampler.delta_lo, sampler.delta_hi) * s.sap_margin;
      break;
    case TaskSampler::Mode::mixed:
      if (rng.uniform() < sampler.hallucination_fraction) {
        s.kind = TrialKind::hallucination;
        s.injection_delta = rng.uniform(0.5, 0.75) * s.sap_margin;
      } else {
        s.kind = TrialKind::context_shift;
        s.sap_margin = rng.uniform(0.8, 1.0);
        s.shift_margin = rng.uniform(1.5, 2.2) * s.sap_margin;
      }
      break;
    case TaskSampler::Mode::mask_stress:
      s.kind = TrialKind::context_shift;
      s.sap_margin = rng.uniform(5.0, 7.0);
      s.shift_margin = rng.uniform(2.6, 4.0);
      break;
  }
  return s;
}

/// A transition table whose greedy path runs 0 -> 1 -> 2 -> ... and, at
/// `drift_state`, prefers `drift_token` (p=0.5) over the continuation the
/// recent history supports (p=0.4).
///
/// Row i puts 0.6 on i+1, 0.3 on i+2 and spreads 0.1 over the rest, so each
/// continuation was already the runner-up one step earlier.
inline TransitionTable drift_table(std::size_t vocab = 16, TokenId drift_state = 10, TokenId drift_token = 14) {
  if (vocab < 5) throw SpecError("drift table needs at least 5 tokens");
  const auto V = static_cast<TokenId>(vocab);
  const auto next = [V](TokenId i, TokenId k) { return static_cast<std::size_t>((i + k) % V); };
  TransitionTable table;
  const double rest = 0.1 / static_cast<double>(vocab - 2);
  for (TokenId i = 0; i < V; ++i) {
    std::vector<double> row(vocab, rest);
    if (i == drift_state) {
      if (static_cast<std::size_t>(drift_token) == next(i, 1) || static_cast<std::size_t>(drift_token) == next(i, 2)) {
        throw SpecError("drift token must differ from the natural continuation");
      }
      row[static_cast<std::size_t>(drift_token)] = 0.5;
      row[next(i, 1)] = 0.4;
      // Mass left for the other vocab - 2 tokens is 0.1.
    } else {
      row[next(i, 1)] = 0.6;
      row[next(i, 2)] = 0.3;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// A long replay trace with a slowly drifting Zipf-like distribution, used
/// for overhead benchmarks at realistic vocabulary sizes.
inline Trace generate_long_trace(std::size_t vocab, std::size_t steps, std::size_t top_m, std::uint64_t seed) {
  if (vocab < 2 || steps == 0 || top_m == 0) throw SpecError("long trace needs vocab >= 2, steps >= 1, top_m >= 1");
  detail::Rng rng(derive_seed(seed, 0xB3C4));
  std::vector<std::size_t> rank_of(vocab);
  for (std::size_t i = 0; i < vocab; ++i) rank_of[i] = i;
  for (std::size_t i = vocab - 1; i > 0; --i) std::swap(rank_of[i], rank_of[rng.below(i + 1)]);
  std::vector<double> level(vocab);
  for (std::size_t r = 0; r < vocab; ++r) level[r] = -std::log1p(static_cast<double>(r));

  Trace trace;
  trace.vocab_size = vocab;
  trace.top_m = std::min(top_m, vocab);
  trace.source = "synthetic/long";
  std::vector<double> logits(vocab);
  const std::size_t hot = std::min<std::size_t>(vocab, 2048);
  for (std::size_t step = 1; step <= steps; ++step) {
    for (std::size_t s = 0; s < 32; ++s) {
      const std::size_t a = rng.below(vocab);
      const std::size_t b = rng.below(vocab);
      if (rank_of[a] < hot || rank_of[b] < hot) std::swap(rank_of[a], rank_of[b]);
    }
    for (std::size_t t = 0; t < vocab; ++t) logits[t] = 4.0 * level[rank_of[t]] + 0.3 * (rng.uniform() - 0.5);
    const LogitVector normalized = log_softmax(LogitVector::dense(logits));
    trace.records.push_back(truncate_to_record(static_cast<std::int64_t>(step), Origin::generated, normalized, trace.top_m));
  }
  return trace;
}

}  // namespace resdec
