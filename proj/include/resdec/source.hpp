// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "resdec/decoder.hpp"
#include "resdec/errors.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"
#include "resdec/trace.hpp"

namespace resdec {

struct SourceOutput {
  LogitVector logits;
  bool eos = false;
};

/// Anything that produces next-token logits step by step.
class LogitSource {
 public:
  virtual ~LogitSource() = default;

  /// Starts a session and returns the prompt-side history records (possibly none).
  virtual std::vector<StepRecord> begin() = 0;

  /// Logits for the next step. `previous` is the token emitted at the last
  /// step (nullopt on the first call). nullopt means the source is exhausted.
  virtual std::optional<SourceOutput> next(std::optional<TokenId> previous) = 0;
};

/// Open-loop replay of a recorded trace: emitted tokens do not influence the logits.
class TraceReplaySource final : public LogitSource {
 public:
  explicit TraceReplaySource(const Trace& trace) : trace_(&trace) {}

  std::vector<StepRecord> begin() override {
    pos_ = 0;
    std::vector<StepRecord> prefill;
    for (const auto& r : trace_->records) {
      if (r.origin == Origin::prefill) prefill.push_back(r);
    }
    return prefill;
  }

  std::optional<SourceOutput> next(std::optional<TokenId>) override {
    while (pos_ < trace_->records.size() && trace_->records[pos_].origin != Origin::generated) ++pos_;
    if (pos_ >= trace_->records.size()) return std::nullopt;
    return SourceOutput{materialize(trace_->records[pos_++], trace_->vocab_size), false};
  }

 private:
  const Trace* trace_;
  std::size_t pos_ = 0;
};

/// Row-stochastic next-token table. Row i is the distribution after token i.
struct TransitionTable {
  std::vector<std::vector<double>> rows;
  std::optional<TokenId> eos;

  std::size_t vocab_size() const noexcept { return rows.size(); }

  void validate() const {
    if (rows.empty()) throw SpecError("transition table is empty");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& row = rows[i];
      if (row.size() != rows.size()) throw SpecError("transition row " + std::to_string(i) + " has the wrong length");
      double sum = 0.0;
      for (double p : row) {
        if (!std::isfinite(p) || p < 0.0) throw SpecError("transition row " + std::to_string(i) + " has a negative entry");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw SpecError("transition row " + std::to_string(i) + " does not sum to 1");
    }
    if (eos && (*eos < 0 || static_cast<std::size_t>(*eos) >= rows.size())) throw SpecError("eos token outside table");
  }

  /// log of row `token`; zero-probability entries become -inf.
  LogitVector logits_after(TokenId token) const {
    const auto& row = rows.at(static_cast<std::size_t>(token));
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] > 0.0 ? std::log(row[j]) : kNegInf;
    return LogitVector::dense(std::move(out));
  }
};

/// Closed-loop source driven by a transition table; fully deterministic.
///
/// Prompt positions before the last one become prefill records: position
/// i predicts prompt[i+1] and is stored as step i - (n - 2), so the last
/// of them is step 0.
class MarkovSource final : public LogitSource {
 public:
  MarkovSource(TransitionTable table, std::vector<TokenId> prompt, std::size_t top_m)
      : table_(std::move(table)), prompt_(std::move(prompt)), top_m_(top_m) {
    table_.validate();
    if (prompt_.empty()) throw SpecError("markov source needs a non-empty prompt");
    for (TokenId t : prompt_) {
      if (t < 0 || static_cast<std::size_t>(t) >= table_.vocab_size()) throw SpecError("prompt token outside table");
    }
  }

  std::vector<StepRecord> begin() override {
    last_ = prompt_.back();
    started_ = false;
    std::vector<StepRecord> prefill;
    const auto n = static_cast<std::int64_t>(prompt_.size());
    for (std::int64_t i = 0; i + 1 < n; ++i) {
      const auto normalized = log_softmax(table_.logits_after(prompt_[static_cast<std::size_t>(i)]));
      prefill.push_back(truncate_to_record(i - (n - 2), Origin::prefill, normalized, top_m_,
                                           prompt_[static_cast<std::size_t>(i + 1)]));
    }
    return prefill;
  }

  std::optional<SourceOutput> next(std::optional<TokenId> previous) override {
    if (started_) {
      if (!previous) throw BackendError("markov source needs the previously emitted token");
      last_ = *previous;
    }
    started_ = true;
    if (table_.eos && last_ == *table_.eos) return std::nullopt;
    return SourceOutput{table_.logits_after(last_), false};
  }

  const TransitionTable& table() const noexcept { return table_; }

 private:
  TransitionTable table_;
  std::vector<TokenId> prompt_;
  std::size_t top_m_;
  TokenId last_ = 0;
  bool started_ = false;
};

/// Passes another source through and keeps every step as a top-M record, so
/// a live session can be written out as a trace and replayed later.
class RecordingSource final : public LogitSource {
 public:
  RecordingSource(LogitSource& inner, std::size_t top_m) : inner_(inner), top_m_(top_m) {}

  std::vector<StepRecord> begin() override {
    records_ = inner_.begin();
    steps_ = 0;
    return records_;
  }

  std::optional<SourceOutput> next(std::optional<TokenId> previous) override {
    if (previous && !records_.empty() && records_.back().origin == Origin::generated) records_.back().chosen = previous;
    auto out = inner_.next(previous);
    if (out && !out->eos) {
      records_.push_back(truncate_to_record(++steps_, Origin::generated, log_softmax(out->logits), top_m_));
    }
    return out;
  }

  /// The recorded session; `last` is the token chosen at the final step.
  Trace trace(std::optional<TokenId> last, std::string source_name) const {
    Trace t;
    t.source = std::move(source_name);
    t.top_m = top_m_;
    t.records = records_;
    if (last && !t.records.empty() && t.records.back().origin == Origin::generated) t.records.back().chosen = last;
    for (const auto& r : t.records) {
      t.top_m = std::max(t.top_m, r.entries.size());
      for (const auto& e : r.entries) t.vocab_size = std::max(t.vocab_size, static_cast<std::size_t>(e.token) + 1);
    }
    return t;
  }

 private:
  LogitSource& inner_;
  std::size_t top_m_;
  std::vector<StepRecord> records_;
  std::int64_t steps_ = 0;
};

struct DecodeResult {
  std::vector<TokenId> tokens;
  std::vector<TokenId> regular_tokens;
  std::vector<StepDiagnostics> diagnostics;
  std::size_t flips = 0;
};

/// Runs a decode session until the source is exhausted, reports eos, the
/// configured eos token is emitted, or max_new_tokens is reached.
inline DecodeResult decode(LogitSource& source, const DecodeConfig& cfg) {
  Decoder dec(cfg);
  for (auto& rec : source.begin()) dec.add_prefill(std::move(rec));
  DecodeResult result;
  std::optional<TokenId> previous;
  while (result.tokens.size() < cfg.max_new_tokens) {
    std::optional<SourceOutput> out;
    const std::int64_t step = dec.next_step();
    try {
      out = source.next(previous);
    } catch (const Error& e) {
      throw BackendError("step " + std::to_string(step) + ": " + e.what());
    }
    if (!out || out->eos) break;
    const auto t0 = std::chrono::steady_clock::now();
    const StepOutcome o = dec.step(out->logits);
    const auto t1 = std::chrono::steady_clock::now();
    dec.set_last_latency(std::chrono::duration<double, std::micro>(t1 - t0).count());
    result.tokens.push_back(o.token);
    result.regular_tokens.push_back(o.regular_token);
    result.flips += o.token != o.regular_token;
    previous = o.token;
    if (cfg.eos_token && o.token == *cfg.eos_token) break;
  }
  result.diagnostics = dec.diagnostics();
  return result;
}

/// Regular decoding of a source with the same mask, strategy and draws as
/// `cfg`, without any history.
inline std::vector<TokenId> decode_regular(LogitSource& source, const DecodeConfig& cfg) {
  cfg.validate();
  source.begin();
  std::vector<TokenId> tokens;
  std::optional<TokenId> previous;
  while (tokens.size() < cfg.max_new_tokens) {
    auto out = source.next(previous);
    if (!out || out->eos) break;
    const auto step = static_cast<std::int64_t>(tokens.size()) + 1;
    const TokenId tok = regular_choice(log_softmax(out->logits), cfg.beta, cfg.strategy, step_uniform(cfg.seed, step));
    tokens.push_back(tok);
    previous = tok;
    if (cfg.eos_token && tok == *cfg.eos_token) break;
  }
  return tokens;
}

}  // namespace resdec
