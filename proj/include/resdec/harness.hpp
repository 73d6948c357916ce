// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "resdec/decoder.hpp"
#include "resdec/errors.hpp"
#include "resdec/metrics.hpp"
#include "resdec/simulator.hpp"
#include "resdec/source.hpp"
#include "resdec/theory.hpp"
#include "resdec/trace.hpp"

namespace resdec {

// ---------------------------------------------------------------------------
// Tabular output

/// Rows of typed cells written as CSV or JSON. Doubles are printed with a
/// fixed precision so output is byte-stable.
class Table {
 public:
  using Cell = std::variant<std::int64_t, double, std::string>;

  explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add(std::vector<Cell> row) {
    if (row.size() != columns_.size()) throw DimensionError("table row has the wrong number of cells");
    rows_.push_back(std::move(row));
  }

  const std::vector<std::string>& columns() const noexcept { return columns_; }
  const std::vector<std::vector<Cell>>& rows() const noexcept { return rows_; }

  static std::string format(const Cell& c) {
    if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&c)) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", *d);
      return buf;
    }
    return std::get<std::string>(c);
  }

  void write_csv(std::ostream& out) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) out << (i ? "," : "") << columns_[i];
    out << '\n';
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format(row[i]);
      out << '\n';
    }
  }

  void write_json(std::ostream& out) const {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& row : rows_) {
      nlohmann::ordered_json obj;
      for (std::size_t i = 0; i < row.size(); ++i) {
        std::visit([&](const auto& v) { obj[columns_[i]] = v; }, row[i]);
      }
      arr.push_back(std::move(obj));
    }
    out << arr.dump(2) << '\n';
  }

  /// Writes CSV, or JSON when `path` ends in ".json".
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0) {
      write_json(out);
    } else {
      write_csv(out);
    }
    if (!out) throw Error("write to '" + path + "' failed");
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<Cell>> rows_;
};

// ---------------------------------------------------------------------------
// Simulated yes/no trials

struct SimulateOptions {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  DecodeConfig cfg;
  TaskSampler sampler;
  /// Strict spec validation applies only to the fixed default task.
  SpecCheck check = SpecCheck::guaranteed;
  TokenId yes_token = 3;
  TokenId no_token = 7;
};

struct TrialOutcome {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  TrialKind kind = TrialKind::hallucination;
  TokenId label = 0;
  double margin = 0.0;
  TokenId regular_token = 0;
  TokenId resdec_token = 0;
  std::size_t flips = 0;
};

struct SimulateReport {
  std::vector<TrialOutcome> trials;
  Confusion regular;
  Confusion resdec;
  std::size_t flips = 0;

  double regular_accuracy() const { return regular.accuracy(); }
  double resdec_accuracy() const { return resdec.accuracy(); }
};

inline TrialOutcome run_trial(const SimulateOptions& opt, std::size_t i) {
  TrialOutcome t;
  t.index = i;
  t.seed = derive_seed(opt.seed, i);
  SyntheticTaskSpec spec = sample_trial_spec(opt.sampler, t.seed);
  const SpecCheck check = opt.sampler.mode == TaskSampler::Mode::fixed ? opt.check : SpecCheck::structural;
  const Trace trace = generate_trace(spec, t.seed, check);
  t.kind = spec.kind;
  t.label = *trace.label;
  t.margin = spec.kind == TrialKind::hallucination ? spec.injection_delta : spec.shift_margin;

  const auto answer_index = static_cast<std::size_t>(*trace.answer_step - 1);
  TraceReplaySource src(trace);
  DecodeConfig cfg = opt.cfg;
  cfg.keep_diagnostics = false;
  const DecodeResult r = decode(src, cfg);
  const std::vector<TokenId> regular = decode_regular(src, cfg);
  if (r.tokens.size() <= answer_index || regular.size() <= answer_index) {
    throw ConfigError("max_new_tokens is shorter than the simulated trace");
  }
  t.resdec_token = r.tokens[answer_index];
  t.regular_token = regular[answer_index];
  t.flips = r.flips;
  return t;
}

inline SimulateReport simulate(const SimulateOptions& opt) {
  SimulateReport rep;
  for (std::size_t i = 0; i < opt.n; ++i) {
    TrialOutcome t = run_trial(opt, i);
    const bool actual = t.label == opt.yes_token;
    rep.regular.add(t.regular_token == opt.yes_token, actual);
    rep.resdec.add(t.resdec_token == opt.yes_token, actual);
    rep.flips += t.flips;
    rep.trials.push_back(t);
  }
  return rep;
}

inline const char* to_string(TrialKind k) {
  return k == TrialKind::hallucination ? "hallucination" : "context_shift";
}

inline Table simulate_table(const SimulateReport& rep) {
  Table t({"trial", "seed", "kind", "label", "margin", "regular_token", "resdec_token", "regular_correct",
           "resdec_correct", "flips"});
  for (const auto& o : rep.trials) {
    t.add({static_cast<std::int64_t>(o.index), std::to_string(o.seed), std::string(to_string(o.kind)),
           static_cast<std::int64_t>(o.label), o.margin, static_cast<std::int64_t>(o.regular_token),
           static_cast<std::int64_t>(o.resdec_token), static_cast<std::int64_t>(o.regular_token == o.label),
           static_cast<std::int64_t>(o.resdec_token == o.label), static_cast<std::int64_t>(o.flips)});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Ablation sweeps

struct SweepGrid {
  std::vector<double> alphas{0.5};
  std::vector<double> betas{0.1};
  std::vector<std::size_t> pool_sizes{8};
  std::vector<std::size_t> windows{8};
  std::vector<Strategy> strategies{Greedy{}};
};

struct SweepRow {
  double alpha = 0.0, beta = 0.0;
  std::size_t pool_size = 0, window = 0;
  Strategy strategy;
  double accuracy = 0.0, f1 = 0.0;
  std::size_t flips = 0;
};

/// Runs `base` over every grid point, in nested order alpha, beta, pool,
/// window, strategy. Every configuration sees the same trials.
inline std::vector<SweepRow> sweep(const SimulateOptions& base, const SweepGrid& grid) {
  std::vector<SweepRow> rows;
  for (double a : grid.alphas) {
    for (double b : grid.betas) {
      for (std::size_t k : grid.pool_sizes) {
        for (std::size_t w : grid.windows) {
          for (const auto& s : grid.strategies) {
            SimulateOptions opt = base;
            opt.cfg.alpha = a;
            opt.cfg.beta = b;
            opt.cfg.pool_k = k;
            opt.cfg.top_m = std::max(opt.cfg.top_m, k);
            opt.cfg.window_w = w;
            opt.cfg.strategy = s;
            const SimulateReport rep = simulate(opt);
            rows.push_back({a, b, k, w, s, rep.resdec.accuracy(), rep.resdec.f1(), rep.flips});
          }
        }
      }
    }
  }
  return rows;
}

inline Table sweep_table(const std::vector<SweepRow>& rows, const std::string& task) {
  Table t({"alpha", "beta", "pool_size", "window", "strategy", "task", "metric", "value"});
  for (const auto& r : rows) {
    const auto base = [&](const char* metric, Table::Cell v) {
      t.add({r.alpha, r.beta, static_cast<std::int64_t>(r.pool_size), static_cast<std::int64_t>(r.window),
             to_string(r.strategy), task, std::string(metric), std::move(v)});
    };
    base("accuracy", r.accuracy);
    base("f1", r.f1);
    base("flips", static_cast<std::int64_t>(r.flips));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Overhead benchmark

struct BenchReport {
  LatencyStats plain;
  LatencyStats resdec;
  std::size_t tokens = 0;
  double ratio() const { return plain.mean > 0.0 ? resdec.mean / plain.mean : 0.0; }
};

/// Per-token wall time of replaying `trace` with plain argmax versus a full
/// ResDec step. Both paths materialize the dense logits first; the first
/// `warmup` repetitions are discarded.
inline BenchReport bench(const Trace& trace, const DecodeConfig& cfg, std::size_t repetitions, std::size_t warmup = 1) {
  using clock = std::chrono::steady_clock;
  std::vector<const StepRecord*> steps;
  for (const auto& r : trace.records) {
    if (r.origin == Origin::generated) steps.push_back(&r);
  }
  if (steps.empty()) throw DimensionError("bench needs a trace with generated steps");
  DecodeConfig c = cfg;
  c.keep_diagnostics = false;
  std::vector<double> plain, full;
  volatile TokenId sink = 0;
  for (std::size_t rep = 0; rep < warmup + repetitions; ++rep) {
    const bool keep = rep >= warmup;
    for (const StepRecord* r : steps) {
      const auto t0 = clock::now();
      const LogitVector logits = materialize(*r, trace.vocab_size);
      sink = argmax_token(logits);
      const auto t1 = clock::now();
      if (keep) plain.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    Decoder dec(c);
    for (const StepRecord* r : steps) {
      const auto t0 = clock::now();
      const LogitVector logits = materialize(*r, trace.vocab_size);
      sink = dec.step(logits).token;
      const auto t1 = clock::now();
      if (keep) full.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
  }
  (void)sink;
  BenchReport out;
  out.tokens = steps.size();
  out.plain = latency_stats(std::move(plain));
  out.resdec = latency_stats(std::move(full));
  return out;
}

// ---------------------------------------------------------------------------
// Theory checks on random instances

struct TheorySummary {
  std::size_t entropy_checks = 0, entropy_failures = 0;
  double entropy_max_error = 0.0;
  std::size_t monotone_applicable = 0, monotone_violations = 0, monotone_not_applicable = 0;
  std::size_t mi_checks = 0, mi_stated_failures = 0, mi_exact_failures = 0;
  double mi_stated_max_error = 0.0, mi_exact_max_error = 0.0;

  bool entropy_ok() const noexcept { return entropy_failures == 0 && entropy_checks > 0; }
  bool monotone_ok() const noexcept { return monotone_violations == 0; }
  bool mi_stated_ok() const noexcept { return mi_stated_failures == 0 && mi_checks > 0; }
  bool mi_exact_ok() const noexcept { return mi_exact_failures == 0 && mi_checks > 0; }
};

namespace detail {

inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  double s = 0.0;
  for (double& v : x) {
    v = -std::log(1.0 - rng.uniform());
    s += v;
  }
  for (double& v : x) v /= s;
  return x;
}

}  // namespace detail

inline theory::TiltFamily random_tilt_family(std::uint64_t seed) {
  detail::Rng rng(seed);
  const std::size_t n = 2 + rng.below(15);
  std::vector<double> logits(n), r(n);
  for (double& l : logits) l = rng.uniform(-3.0, 3.0);
  const std::vector<double> p0 = softmax(logits);
  // Half of the families have a residual aligned with log p0 so that the
  // entropy-decrease hypotheses hold on a useful share of instances.
  const bool aligned = rng.bits() & 1U;
  const double scale = rng.uniform(0.1, 1.5);
  for (std::size_t y = 0; y < n; ++y) {
    r[y] = aligned ? scale * std::log(p0[y]) + rng.uniform(-0.05, 0.05) : rng.uniform(-2.0, 2.0);
  }
  return theory::TiltFamily(DenseDistribution(p0), std::move(r));
}

struct RandomJoint {
  theory::DiscreteJoint joint;
  theory::Channel base;
  theory::Channel residual;
};

/// |V|, |Y| in [2, 4], |H| in [1, 3], all rows drawn uniformly from the simplex.
inline RandomJoint random_joint(std::uint64_t seed) {
  detail::Rng rng(seed);
  const std::size_t nv = 2 + rng.below(3), ny = 2 + rng.below(3), nh = 1 + rng.below(3);
  RandomJoint out;
  std::vector<std::vector<double>> v_given_h;
  out.base.resize(nh);
  out.residual.resize(nh);
  for (std::size_t h = 0; h < nh; ++h) {
    v_given_h.push_back(detail::random_simplex(rng, nv));
    for (std::size_t v = 0; v < nv; ++v) {
      out.base[h].push_back(detail::random_simplex(rng, ny));
      out.residual[h].push_back(detail::random_simplex(rng, ny));
    }
  }
  out.joint = theory::DiscreteJoint::from_channel(detail::random_simplex(rng, nh), v_given_h, out.base);
  return out;
}

struct TheoryTolerances {
  double entropy = 1e-6;
  double mi = 1e-5;
  double fd_step = 1e-5;
};

inline TheorySummary run_theory_suite(std::size_t tilt_instances, std::size_t joint_instances, std::uint64_t seed,
                                      const TheoryTolerances& tol = {}) {
  TheorySummary s;
  for (std::size_t i = 0; i < tilt_instances; ++i) {
    const theory::TiltFamily fam = random_tilt_family(derive_seed(seed, 2 * i));
    for (int g = 0; g <= 10; ++g) {
      const double a = 0.1 * g;
      const double fd = theory::central_difference([&](double x) { return theory::tilt_entropy(fam, x); }, a, tol.fd_step);
      const double err = std::abs(fd - theory::entropy_derivative(fam, a));
      s.entropy_max_error = std::max(s.entropy_max_error, err);
      ++s.entropy_checks;
      s.entropy_failures += !(err <= tol.entropy);
    }
    const auto rep = theory::check_entropy_monotonicity(fam);
    if (rep.hypotheses_hold) {
      ++s.monotone_applicable;
      s.monotone_violations += !rep.entropy_decreases;
    } else {
      ++s.monotone_not_applicable;
    }
  }
  for (std::size_t i = 0; i < joint_instances; ++i) {
    const RandomJoint j = random_joint(derive_seed(seed, 2 * i + 1));
    const double fd = theory::mi_derivative_fd(j.joint, j.base, j.residual, tol.fd_step);
    const double stated = std::abs(theory::mi_derivative_at_zero(j.joint, j.base, j.residual) - fd);
    const double exact = std::abs(theory::mi_derivative_exact(j.joint, j.base, j.residual) - fd);
    ++s.mi_checks;
    s.mi_stated_failures += !(stated <= tol.mi);
    s.mi_exact_failures += !(exact <= tol.mi);
    s.mi_stated_max_error = std::max(s.mi_stated_max_error, stated);
    s.mi_exact_max_error = std::max(s.mi_exact_max_error, exact);
  }
  return s;
}

inline Table theory_table(const TheorySummary& s) {
  Table t({"check", "instances", "failures", "max_abs_error", "status"});
  const auto row = [&](const char* name, std::size_t n, std::size_t f, double err, bool ok) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", err);
    t.add({std::string(name), static_cast<std::int64_t>(n), static_cast<std::int64_t>(f), std::string(buf),
           std::string(ok ? "pass" : "fail")});
  };
  row("entropy_derivative_fd", s.entropy_checks, s.entropy_failures, s.entropy_max_error, s.entropy_ok());
  row("entropy_decrease_where_applicable", s.monotone_applicable, s.monotone_violations, 0.0, s.monotone_ok());
  row("mi_derivative_stated_formula_fd", s.mi_checks, s.mi_stated_failures, s.mi_stated_max_error, s.mi_stated_ok());
  row("mi_derivative_exact_fd", s.mi_checks, s.mi_exact_failures, s.mi_exact_max_error, s.mi_exact_ok());
  return t;
}

}  // namespace resdec
