// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Numerically robust distribution primitives. Every quantity is in nats:
// the Jensen-Shannon divergence is bounded by ln 2, not by 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "resdec/errors.hpp"

namespace resdec {

using TokenId = std::int32_t;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLn2 = std::numbers::ln2;

/// Scores in log space over an ordered set of token ids.
///
/// A dense vector covers tokens 0..size()-1 and stores no explicit domain.
/// An explicit-domain vector (a candidate pool, or the sparse top-M list a
/// backend returns) keeps the ids alongside the scores. Entries are finite
/// unless masked to -inf.
class LogitVector {
 public:
  LogitVector() = default;

  static LogitVector dense(std::vector<double> scores) {
    LogitVector v;
    v.scores_ = std::move(scores);
    return v;
  }

  static LogitVector over(std::vector<TokenId> domain, std::vector<double> scores) {
    if (domain.size() != scores.size()) {
      throw DimensionError("logit domain has " + std::to_string(domain.size()) + " ids but " +
                           std::to_string(scores.size()) + " scores");
    }
    std::vector<TokenId> sorted = domain;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw DimensionError("logit domain contains duplicate token ids");
    }
    if (!sorted.empty() && sorted.front() < 0) throw DimensionError("negative token id in domain");
    LogitVector v;
    v.domain_ = std::move(domain);
    v.scores_ = std::move(scores);
    v.explicit_ = true;
    return v;
  }

  std::size_t size() const noexcept { return scores_.size(); }
  bool empty() const noexcept { return scores_.empty(); }
  bool is_dense() const noexcept { return !explicit_; }

  TokenId token(std::size_t i) const noexcept {
    return explicit_ ? domain_[i] : static_cast<TokenId>(i);
  }

  /// Position of `id` in the domain. Linear in size() for explicit domains.
  std::optional<std::size_t> find(TokenId id) const noexcept {
    if (!explicit_) {
      if (id < 0 || static_cast<std::size_t>(id) >= scores_.size()) return std::nullopt;
      return static_cast<std::size_t>(id);
    }
    auto it = std::find(domain_.begin(), domain_.end(), id);
    if (it == domain_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - domain_.begin());
  }

  /// Largest token id covered plus one; zero for an empty vector.
  std::size_t id_bound() const noexcept {
    if (!explicit_) return scores_.size();
    if (domain_.empty()) return 0;
    return static_cast<std::size_t>(*std::max_element(domain_.begin(), domain_.end())) + 1;
  }

  std::span<const double> scores() const noexcept { return scores_; }
  std::span<double> scores() noexcept { return scores_; }
  double operator[](std::size_t i) const noexcept { return scores_[i]; }
  double& operator[](std::size_t i) noexcept { return scores_[i]; }

  /// Explicit ids, empty for dense vectors.
  std::span<const TokenId> domain() const noexcept { return domain_; }

  /// Same domain, new scores.
  LogitVector with_scores(std::vector<double> scores) const {
    if (scores.size() != scores_.size()) throw DimensionError("score count does not match domain");
    LogitVector v = *this;
    v.scores_ = std::move(scores);
    return v;
  }

  friend bool operator==(const LogitVector&, const LogitVector&) = default;

 private:
  std::vector<TokenId> domain_;
  std::vector<double> scores_;
  bool explicit_ = false;
};

/// Nonnegative probabilities summing to one within 1e-9.
class DenseDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  DenseDistribution() = default;

  explicit DenseDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    double sum = 0.0;
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0) throw DimensionError("probability entries must be finite and >= 0");
      sum += p;
    }
    if (probs_.empty() || std::abs(sum - 1.0) > kSumTolerance) {
      throw DimensionError("probabilities sum to " + std::to_string(sum) + ", expected 1");
    }
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const noexcept { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

  friend bool operator==(const DenseDistribution&, const DenseDistribution&) = default;

 private:
  std::vector<double> probs_;
};

/// The top-k tokens of the current step (descending score, ties by ascending id).
struct CandidatePool {
  std::vector<TokenId> tokens;
  std::size_t k = 0;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  friend bool operator==(const CandidatePool&, const CandidatePool&) = default;
};

namespace detail {

inline double finite_max(std::span<const double> xs) noexcept {
  double m = kNegInf;
  for (double x : xs) m = x > m ? x : m;
  return m;
}

}  // namespace detail

/// log(sum(exp(x))) over the finite entries. Throws if none is finite.
inline double log_sum_exp(std::span<const double> xs) {
  const double m = detail::finite_max(xs);
  if (!std::isfinite(m)) throw DegenerateDistribution("log-sum-exp of an all -inf vector");
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

/// Shift-normalizes scores so that their log-sum-exp is 0. -inf entries stay -inf.
inline std::vector<double> log_softmax(std::span<const double> xs) {
  for (double x : xs) {
    if (std::isnan(x)) throw DegenerateDistribution("NaN logit");
  }
  const double lse = log_sum_exp(xs);
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] - lse;
  return out;
}

inline LogitVector log_softmax(const LogitVector& raw) { return raw.with_scores(log_softmax(raw.scores())); }

inline std::vector<double> softmax(std::span<const double> xs) {
  const double m = detail::finite_max(xs);
  if (!std::isfinite(m)) throw DegenerateDistribution("softmax of an all -inf vector");
  std::vector<double> out(xs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - m);
    s += out[i];
  }
  for (double& p : out) p /= s;
  return out;
}

/// KL(p || q) in nats with 0 log 0 = 0. No flooring: q_j = 0 < p_j is an error.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
  double d = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0.0) continue;
    if (q[j] == 0.0) {
      throw SupportMismatch("kl_divergence: q[" + std::to_string(j) + "] = 0 where p > 0");
    }
    d += p[j] * std::log(p[j] / q[j]);
  }
  return d > 0.0 ? d : 0.0;
}

inline double kl_divergence(const DenseDistribution& p, const DenseDistribution& q) {
  return kl_divergence(p.probs(), q.probs());
}

/// Jensen-Shannon divergence in nats, in [0, ln 2].
///
/// Each term is evaluated as a*log(a/m) + b*log(b/m) with m = (a+b)/2; the
/// expression is commutative term by term, so js(p,q) == js(q,p) bitwise.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("js_divergence: length mismatch");
  constexpr double kFloor = 1e-12;
  double d = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double a = p[j];
    const double b = q[j];
    const double m = std::max(0.5 * (a + b), kFloor);
    const double ta = a > 0.0 ? a * std::log(a / m) : 0.0;
    const double tb = b > 0.0 ? b * std::log(b / m) : 0.0;
    d += ta + tb;
  }
  return std::clamp(0.5 * d, 0.0, kLn2);
}

inline double js_divergence(const DenseDistribution& p, const DenseDistribution& q) {
  return js_divergence(p.probs(), q.probs());
}

/// Shannon entropy in nats, in [0, ln n].
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  const double hmax = p.empty() ? 0.0 : std::log(static_cast<double>(p.size()));
  return std::clamp(h, 0.0, hmax);
}

inline double entropy(const DenseDistribution& p) { return entropy(p.probs()); }

/// Softmax of `v` restricted to the pool's tokens, in pool order.
inline DenseDistribution restrict_renormalize(const LogitVector& v, const CandidatePool& pool) {
  if (pool.empty()) throw EmptyPool("restrict_renormalize: empty candidate pool");
  std::vector<double> picked;
  picked.reserve(pool.size());
  for (TokenId t : pool.tokens) {
    const auto pos = v.find(t);
    if (!pos) throw DimensionError("pool token " + std::to_string(t) + " is not in the logit domain");
    picked.push_back(v[*pos]);
  }
  return DenseDistribution(softmax(picked));
}

}  // namespace resdec
