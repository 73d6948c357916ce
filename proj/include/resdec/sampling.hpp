// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/math.hpp"

namespace resdec {

struct Greedy {
  friend bool operator==(const Greedy&, const Greedy&) = default;
};
struct TopK {
  std::size_t k = 50;
  friend bool operator==(const TopK&, const TopK&) = default;
};
struct Nucleus {
  double p = 0.7;
  friend bool operator==(const Nucleus&, const Nucleus&) = default;
};
struct Temperature {
  double t = 0.5;
  friend bool operator==(const Temperature&, const Temperature&) = default;
};

using Strategy = std::variant<Greedy, TopK, Nucleus, Temperature>;

inline void validate(const Strategy& s) {
  if (const auto* k = std::get_if<TopK>(&s); k && k->k < 1) throw ConfigError("top-k needs k >= 1");
  if (const auto* n = std::get_if<Nucleus>(&s); n && !(n->p > 0.0 && n->p <= 1.0)) {
    throw ConfigError("nucleus needs 0 < p <= 1");
  }
  if (const auto* t = std::get_if<Temperature>(&s); t && !(t->t > 0.0 && std::isfinite(t->t))) {
    throw ConfigError("temperature needs t > 0");
  }
}

inline std::string to_string(const Strategy& s) {
  struct Visitor {
    std::string operator()(const Greedy&) const { return "greedy"; }
    std::string operator()(const TopK& k) const { return "topk:" + std::to_string(k.k); }
    std::string operator()(const Nucleus& n) const {
      char buf[32];
      auto r = std::to_chars(buf, buf + sizeof buf, n.p);
      return "nucleus:" + std::string(buf, r.ptr);
    }
    std::string operator()(const Temperature& t) const {
      char buf[32];
      auto r = std::to_chars(buf, buf + sizeof buf, t.t);
      return "temp:" + std::string(buf, r.ptr);
    }
  };
  return std::visit(Visitor{}, s);
}

/// Parses `greedy`, `topk:<k>`, `nucleus:<p>` or `temp:<t>`.
inline Strategy parse_strategy(std::string_view text) {
  if (text == "greedy") return Greedy{};
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ConfigError("unknown strategy '" + std::string(text) + "'");
  const std::string_view name = text.substr(0, colon);
  const std::string arg(text.substr(colon + 1));
  Strategy s;
  try {
    std::size_t used = 0;
    if (name == "topk") {
      const long k = std::stol(arg, &used);
      if (k < 1) throw ConfigError("top-k needs k >= 1");
      s = TopK{static_cast<std::size_t>(k)};
    } else if (name == "nucleus") {
      s = Nucleus{std::stod(arg, &used)};
    } else if (name == "temp") {
      s = Temperature{std::stod(arg, &used)};
    } else {
      throw ConfigError("unknown strategy '" + std::string(text) + "'");
    }
    if (used != arg.size()) throw ConfigError("trailing characters in strategy '" + std::string(text) + "'");
  } catch (const std::logic_error&) {
    throw ConfigError("bad strategy parameter in '" + std::string(text) + "'");
  }
  validate(s);
  return s;
}

/// SplitMix64 step; deterministic and identical on every platform.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Independent 64-bit seed for substream `stream` of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  splitmix64(s);
  return splitmix64(s);
}

inline double to_unit(std::uint64_t bits) noexcept { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// The uniform draw used for sampling at `step` of a session seeded with `seed`.
inline double step_uniform(std::uint64_t seed, std::int64_t step) noexcept {
  return to_unit(derive_seed(seed, static_cast<std::uint64_t>(step)));
}

/// Finite argmax; ties go to the lowest token id.
inline TokenId argmax_token(const LogitVector& v) {
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) continue;
    if (best == v.size() || v[i] > v[best] || (v[i] == v[best] && v.token(i) < v.token(best))) best = i;
  }
  if (best == v.size()) throw DegenerateDistribution("argmax of an all -inf vector");
  return v.token(best);
}

namespace detail {

inline TokenId draw(const LogitVector& v, std::span<const std::size_t> order, std::span<const double> weights,
                    double u) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double target = u * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    cum += weights[i];
    if (target < cum) return v.token(order[i]);
  }
  return v.token(order.back());
}

}  // namespace detail

/// Draws a token from `masked` with uniform variate `u` in [0, 1).
///
/// Greedy ignores `u`. Stochastic strategies rank the finite entries by score
/// (ties by id), transform them and invert the CDF in that order, so a given
/// (logits, u) pair always yields the same token.
inline TokenId sample(const LogitVector& masked, const Strategy& strategy, double u) {
  if (std::holds_alternative<Greedy>(strategy)) return argmax_token(masked);

  std::vector<std::size_t> order;
  order.reserve(masked.size());
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (std::isfinite(masked[i])) order.push_back(i);
  }
  if (order.empty()) throw DegenerateDistribution("sample from an all -inf vector");
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (masked[a] != masked[b]) return masked[a] > masked[b];
    return masked.token(a) < masked.token(b);
  });

  double scale = 1.0;
  if (const auto* t = std::get_if<Temperature>(&strategy)) scale = 1.0 / t->t;
  if (const auto* k = std::get_if<TopK>(&strategy)) order.resize(std::min(k->k, order.size()));

  const double top = masked[order.front()] * scale;
  std::vector<double> w(order.size());
  double total = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    w[i] = std::exp(masked[order[i]] * scale - top);
    total += w[i];
  }

  if (const auto* n = std::get_if<Nucleus>(&strategy)) {
    double cum = 0.0;
    std::size_t keep = order.size();
    for (std::size_t i = 0; i < order.size(); ++i) {
      cum += w[i] / total;
      if (cum >= n->p - 1e-12) {
        keep = i + 1;
        break;
      }
    }
    order.resize(keep);
    w.resize(keep);
  }
  return detail::draw(masked, order, w, u);
}

}  // namespace resdec
