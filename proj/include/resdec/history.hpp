// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/math.hpp"

namespace resdec {

/// Indices of the `m` largest finite scores, ordered by score descending and
/// then by ascending token id.
inline std::vector<std::size_t> top_indices(const LogitVector& v, std::size_t m) {
  std::vector<std::size_t> idx;
  idx.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i])) idx.push_back(i);
  }
  const auto better = [&v](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return v.token(a) < v.token(b);
  };
  m = std::min(m, idx.size());
  if (m < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(), better);
    idx.resize(m);
  }
  std::sort(idx.begin(), idx.end(), better);
  return idx;
}

enum class Origin { prefill, generated };

struct TokenLogit {
  TokenId token = 0;
  double logit = 0.0;
  friend bool operator==(const TokenLogit&, const TokenLogit&) = default;
};

/// One decode step's retained top-M log-normalized logits.
///
/// Prefill records carry step indices <= 0, generated records >= 1. Entries
/// are sorted by logit descending (ties by ascending id) and were cut from a
/// vector whose log-sum-exp was 0, so `floor_logit` bounds every token that
/// was not retained.
struct StepRecord {
  std::int64_t step_index = 0;
  Origin origin = Origin::generated;
  std::vector<TokenLogit> entries;
  double floor_logit = 0.0;
  std::optional<TokenId> chosen;

  /// Score used for tokens that fell outside the retained top-M.
  double fill_logit() const noexcept { return floor_logit - 1.0; }

  std::optional<double> lookup(TokenId t) const noexcept {
    for (const auto& e : entries) {
      if (e.token == t) return e.logit;
    }
    return std::nullopt;
  }

  void validate() const {
    const std::string where = "step " + std::to_string(step_index) + ": ";
    if (entries.empty()) throw DimensionError(where + "record has no entries");
    if (origin == Origin::prefill && step_index > 0) throw OrderingError(where + "prefill step index must be <= 0");
    if (origin == Origin::generated && step_index < 1) throw OrderingError(where + "generated step index must be >= 1");
    std::vector<TokenId> ids;
    ids.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (!std::isfinite(e.logit)) throw DimensionError(where + "non-finite logit");
      if (e.token < 0) throw DimensionError(where + "negative token id");
      if (i > 0) {
        const auto& prev = entries[i - 1];
        if (prev.logit < e.logit || (prev.logit == e.logit && prev.token > e.token)) {
          throw DimensionError(where + "entries are not sorted by logit descending");
        }
      }
      ids.push_back(e.token);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DimensionError(where + "duplicate token id");
    if (floor_logit != entries.back().logit) throw DimensionError(where + "floor_logit must equal the smallest entry");
    std::vector<double> xs;
    xs.reserve(entries.size());
    for (const auto& e : entries) xs.push_back(e.logit);
    if (log_sum_exp(xs) > 1e-9) throw DimensionError(where + "entries are not log-normalized (log-sum-exp > 0)");
  }

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Builds a record from sorted entries; the floor is the last entry.
inline StepRecord make_record(std::int64_t step, Origin origin, std::vector<TokenLogit> entries,
                              std::optional<TokenId> chosen = std::nullopt) {
  StepRecord rec;
  rec.step_index = step;
  rec.origin = origin;
  rec.entries = std::move(entries);
  rec.floor_logit = rec.entries.empty() ? 0.0 : rec.entries.back().logit;
  rec.chosen = chosen;
  rec.validate();
  return rec;
}

/// Truncates a log-softmax-normalized vector to its top-M entries.
inline StepRecord truncate_to_record(std::int64_t step, Origin origin, const LogitVector& normalized,
                                     std::size_t top_m, std::optional<TokenId> chosen = std::nullopt) {
  std::vector<TokenLogit> entries;
  for (std::size_t i : top_indices(normalized, top_m)) entries.push_back({normalized.token(i), normalized[i]});
  return make_record(step, origin, std::move(entries), chosen);
}

using RecordRef = std::reference_wrapper<const StepRecord>;

inline std::vector<RecordRef> as_refs(std::span<const StepRecord> records) {
  return {records.begin(), records.end()};
}

/// Pool-ordered logits of `rec`; tokens outside the retained top-M get the
/// record's fill value (floor - 1 nat).
inline LogitVector pool_logits(const StepRecord& rec, const CandidatePool& pool) {
  std::vector<TokenLogit> by_token = rec.entries;
  std::sort(by_token.begin(), by_token.end(), [](const auto& a, const auto& b) { return a.token < b.token; });
  std::vector<double> values;
  values.reserve(pool.size());
  for (TokenId t : pool.tokens) {
    auto it = std::lower_bound(by_token.begin(), by_token.end(), t,
                               [](const TokenLogit& e, TokenId id) { return e.token < id; });
    values.push_back(it != by_token.end() && it->token == t ? it->logit : rec.fill_logit());
  }
  return LogitVector::over(pool.tokens, std::move(values));
}

/// Bounded store of recent step records.
///
/// Generated records live in a ring of `capacity`; prefill records keep only
/// the last `prefill_capacity` prompt positions and are never evicted by
/// generated pushes. Step indices are strictly increasing across both.
class HistoryBuffer {
 public:
  HistoryBuffer(std::size_t capacity, std::size_t prefill_capacity)
      : capacity_(capacity), prefill_capacity_(prefill_capacity) {
    if (capacity == 0) throw ConfigError("history capacity must be positive");
  }

  void push(StepRecord rec) {
    if (newest_ && rec.step_index <= *newest_) {
      throw OrderingError("push of step " + std::to_string(rec.step_index) + " after step " +
                          std::to_string(*newest_));
    }
    if (rec.origin == Origin::prefill && rec.step_index > 0) throw OrderingError("prefill step index must be <= 0");
    if (rec.origin == Origin::generated && rec.step_index < 1) throw OrderingError("generated step index must be >= 1");
    newest_ = rec.step_index;
    if (rec.origin == Origin::prefill) {
      if (prefill_capacity_ == 0) return;
      prefill_.push_back(std::move(rec));
      if (prefill_.size() > prefill_capacity_) prefill_.pop_front();
    } else {
      records_.push_back(std::move(rec));
      if (records_.size() > capacity_) records_.pop_front();
    }
  }

  /// The min(w, available) most recent records with step < t, oldest first.
  /// Generated history is used first; the prefill tail backfills the rest.
  std::vector<RecordRef> window(std::int64_t t, std::size_t w) const {
    if (w < 2) throw ConfigError("history window must be >= 2");
    std::vector<RecordRef> gen;
    for (auto it = records_.rbegin(); it != records_.rend() && gen.size() < w; ++it) {
      if (it->step_index < t) gen.push_back(std::cref(*it));
    }
    std::vector<RecordRef> out;
    const std::size_t missing = w - gen.size();
    if (missing > 0) {
      std::vector<RecordRef> pre;
      for (auto it = prefill_.rbegin(); it != prefill_.rend() && pre.size() < missing; ++it) {
        if (it->step_index < t) pre.push_back(std::cref(*it));
      }
      out.assign(pre.rbegin(), pre.rend());
    }
    out.insert(out.end(), gen.rbegin(), gen.rend());
    if (out.empty()) throw EmptyHistory("no history before step " + std::to_string(t));
    return out;
  }

  std::size_t size() const noexcept { return records_.size(); }
  std::size_t prefill_size() const noexcept { return prefill_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t prefill_capacity() const noexcept { return prefill_capacity_; }
  std::optional<std::int64_t> newest_step() const noexcept { return newest_; }
  const std::deque<StepRecord>& records() const noexcept { return records_; }
  const std::deque<StepRecord>& prefill_records() const noexcept { return prefill_; }

 private:
  std::size_t capacity_;
  std::size_t prefill_capacity_;
  std::deque<StepRecord> records_;
  std::deque<StepRecord> prefill_;
  std::optional<std::int64_t> newest_;
};

}  // namespace resdec
