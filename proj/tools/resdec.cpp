// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

// resdec: decode, simulate, sweep, benchmark and analyse.
//
// Exit status: 0 ok, 1 a requested metric threshold was missed, 2 usage,
// input or backend error.

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "resdec/resdec.hpp"

namespace {

using namespace resdec;

constexpr int kOk = 0;
constexpr int kThresholdFailed = 1;
constexpr int kUsage = 2;

struct CommonOptions {
  double alpha = 0.5;
  double beta = 0.1;
  std::size_t window = 8;
  std::size_t pool_size = 256;
  std::size_t top_m = 1024;
  std::string strategy = "greedy";
  std::string aggregation = "confidence";
  std::uint64_t seed = 0;
  std::vector<std::string> traces;
  std::string output;

  DecodeConfig config() const {
    DecodeConfig cfg;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.window_w = window;
    cfg.pool_k = pool_size;
    cfg.top_m = top_m;
    cfg.strategy = parse_strategy(strategy);
    cfg.aggregation = parse_aggregation(aggregation);
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--alpha", o.alpha, "residual fusion weight")->capture_default_str();
  app->add_option("--beta", o.beta, "plausibility cutoff")->capture_default_str();
  app->add_option("--window", o.window, "history window W")->capture_default_str();
  app->add_option("--pool-size", o.pool_size, "candidate pool size K")->capture_default_str();
  app->add_option("--top-m", o.top_m, "entries kept per history record")->capture_default_str();
  app->add_option("--strategy", o.strategy, "greedy | topk:<k> | nucleus:<p> | temp:<t>")->capture_default_str();
  app->add_option("--aggregation", o.aggregation, "confidence | uniform | decay | topn:<n>")->capture_default_str();
  app->add_option("--seed", o.seed, "root seed")->capture_default_str();
  app->add_option("--trace", o.traces, "resdec-trace/1 file(s)");
  app->add_option("-o,--output", o.output, "write results (.json for JSON, CSV otherwise)");
}

std::vector<TokenId> parse_ids(const std::string& text) {
  std::vector<TokenId> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(item, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != item.size() || v < 0) throw ConfigError("bad token id '" + item + "'");
    ids.push_back(static_cast<TokenId>(v));
  }
  return ids;
}

std::string join(const std::vector<TokenId>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
  return s;
}

void emit(const Table& t, const std::string& path) {
  if (path.empty()) {
    t.write_csv(std::cout);
  } else {
    t.save(path);
  }
}

std::optional<TaskSampler::Mode> parse_mode(const std::string& s) {
  if (s == "fixed") return TaskSampler::Mode::fixed;
  if (s == "robust") return TaskSampler::Mode::robust;
  if (s == "mixed") return TaskSampler::Mode::mixed;
  if (s == "mask-stress") return TaskSampler::Mode::mask_stress;
  return std::nullopt;
}

// Simulator task options shared by simulate, sweep, profile-jsd and offset-accuracy.
struct TaskOptions {
  std::size_t n = 1000;
  std::string mode = "fixed";
  double sigma = 0.1;
  double delta = 2.0;
  double margin = 3.0;
  double delta_lo = 0.5;
  double delta_hi = 0.95;
  bool relaxed = false;

  void add(CLI::App* app, std::size_t default_n, const std::string& default_mode) {
    n = default_n;
    mode = default_mode;
    app->add_option("--n", n, "number of simulated trials")->capture_default_str();
    app->add_option("--mode", mode, "fixed | robust | mixed | mask-stress")->capture_default_str();
    app->add_option("--sigma", sigma, "logit noise stddev")->capture_default_str();
    app->add_option("--delta", delta, "injected lead of the distractor")->capture_default_str();
    app->add_option("--margin", margin, "anchored-step margin")->capture_default_str();
    app->add_option("--delta-lo", delta_lo, "robust mode: lower delta / margin")->capture_default_str();
    app->add_option("--delta-hi", delta_hi, "robust mode: upper delta / margin")->capture_default_str();
    app->add_flag("--relaxed", relaxed, "fixed mode: accept specs outside the guaranteed region");
  }

  TaskSampler sampler() const {
    const auto m = parse_mode(mode);
    if (!m) throw ConfigError("unknown mode '" + mode + "'");
    TaskSampler s;
    s.mode = *m;
    s.base.noise_sigma = sigma;
    s.base.injection_delta = delta;
    s.base.sap_margin = margin;
    s.delta_lo = delta_lo;
    s.delta_hi = delta_hi;
    return s;
  }

  SimulateOptions simulate_options(const CommonOptions& c) const {
    SimulateOptions opt;
    opt.n = n;
    opt.seed = c.seed;
    opt.cfg = c.config();
    opt.sampler = sampler();
    opt.check = relaxed ? SpecCheck::structural : SpecCheck::guaranteed;
    opt.cfg.max_new_tokens = opt.sampler.base.guide_len + 1;
    return opt;
  }

  /// The simulated traces themselves, one per trial seed.
  std::vector<Trace> traces(std::uint64_t seed) const {
    const TaskSampler s = sampler();
    std::vector<Trace> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t ts = derive_seed(seed, i);
      const SpecCheck check = s.mode == TaskSampler::Mode::fixed && !relaxed ? SpecCheck::guaranteed : SpecCheck::structural;
      out.push_back(generate_trace(sample_trial_spec(s, ts), ts, check));
    }
    return out;
  }
};

std::vector<Trace> load_traces(const std::vector<std::string>& paths) {
  std::vector<Trace> out;
  for (const auto& p : paths) out.push_back(read_trace(p));
  return out;
}

// ---------------------------------------------------------------------------

struct RunOptions {
  CommonOptions common;
  std::string backend;
  std::string backend_cmd;
  std::string prompt;
  bool markov = false;
  std::size_t max_new_tokens = 64;
  std::optional<TokenId> eos;
  std::string dump_trace;
};

Table run_table(const DecodeResult& r) {
  Table t({"step", "token", "regular_token", "fallback", "pool_size", "window_size", "valley", "delta_first",
           "delta_last", "segmentation_skipped"});
  for (const auto& d : r.diagnostics) {
    t.add({d.step, static_cast<std::int64_t>(d.token), static_cast<std::int64_t>(d.regular_token),
           static_cast<std::int64_t>(d.fallback), static_cast<std::int64_t>(d.pool_size),
           static_cast<std::int64_t>(d.window_size), static_cast<std::int64_t>(d.segmentation.valley_index),
           static_cast<std::int64_t>(d.segmentation.delta.first), static_cast<std::int64_t>(d.segmentation.delta.last),
           static_cast<std::int64_t>(d.segmentation.skipped)});
  }
  return t;
}

int cmd_run(const RunOptions& o) {
  DecodeConfig cfg = o.common.config();
  cfg.max_new_tokens = o.max_new_tokens;
  cfg.eos_token = o.eos;

  const int sources = static_cast<int>(!o.common.traces.empty()) + static_cast<int>(!o.backend.empty()) +
                      static_cast<int>(o.markov);
  if (sources != 1) throw ConfigError("run needs exactly one of --trace, --backend or --markov");
  if (o.common.traces.size() > 1) throw ConfigError("run replays a single trace");

  std::optional<Trace> trace;
  std::unique_ptr<ProcessChannel> channel;
  std::unique_ptr<LogitSource> source;
  std::string source_name;
  if (!o.common.traces.empty()) {
    trace = read_trace(o.common.traces.front());
    source = std::make_unique<TraceReplaySource>(*trace);
    source_name = "replay:" + o.common.traces.front();
  } else if (o.markov) {
    const auto prompt = parse_ids(o.prompt.empty() ? "0" : o.prompt);
    source = std::make_unique<MarkovSource>(drift_table(), prompt, cfg.top_m);
    source_name = "markov/drift";
  } else {
    if (o.backend != "stdio") throw ConfigError("unknown backend '" + o.backend + "' (only 'stdio')");
    if (o.backend_cmd.empty()) throw ConfigError("--backend stdio needs --backend-cmd");
    const auto prompt = parse_ids(o.prompt);
    if (prompt.empty()) throw ConfigError("--backend stdio needs a non-empty --prompt");
    channel = std::make_unique<ProcessChannel>(o.backend_cmd);
    source = std::make_unique<StdioBackendSource>(*channel, prompt);
    source_name = "stdio:" + o.backend_cmd;
  }

  RecordingSource recorder(*source, cfg.top_m);
  const DecodeResult r = decode(recorder, cfg);
  std::vector<TokenId> regular;
  if (trace) {
    TraceReplaySource again(*trace);
    regular = decode_regular(again, cfg);
  }
  if (auto* backend = dynamic_cast<StdioBackendSource*>(source.get())) {
    backend->close();
    channel->finish();
  }

  std::cout << "tokens: " << join(r.tokens) << '\n';
  // For closed-loop sources the per-step counterfactual is the honest
  // comparison: regular decoding diverges once a token differs.
  std::cout << "regular: " << join(trace ? regular : r.regular_tokens) << '\n';
  std::cout << "flips: " << r.flips << '\n';
  if (!o.common.output.empty()) run_table(r).save(o.common.output);
  if (!o.dump_trace.empty()) {
    Trace t = recorder.trace(r.tokens.empty() ? std::nullopt : std::optional<TokenId>(r.tokens.back()), source_name);
    if (trace) t.vocab_size = std::max(t.vocab_size, trace->vocab_size);
    if (o.markov) t.vocab_size = drift_table().vocab_size();
    write_trace(t, o.dump_trace);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonOptions& c, const TaskOptions& task, std::optional<double> min_accuracy) {
  const SimulateOptions opt = task.simulate_options(c);
  const SimulateReport rep = simulate(opt);
  std::printf("trials %zu\n", rep.trials.size());
  std::printf("regular accuracy %.3f f1 %.3f\n", rep.regular.accuracy(), rep.regular.f1());
  std::printf("resdec accuracy %.3f f1 %.3f\n", rep.resdec.accuracy(), rep.resdec.f1());
  std::printf("flips %zu\n", rep.flips);
  if (!c.output.empty()) simulate_table(rep).save(c.output);
  if (min_accuracy && rep.resdec.accuracy() < *min_accuracy) {
    std::fprintf(stderr, "resdec accuracy %.3f below %.3f\n", rep.resdec.accuracy(), *min_accuracy);
    return kThresholdFailed;
  }
  return kOk;
}

struct SweepOptions {
  std::vector<double> alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> betas;
  std::vector<std::size_t> pool_sizes;
  std::vector<std::size_t> windows;
  std::vector<std::string> strategies;
};

int cmd_sweep(const CommonOptions& c, const TaskOptions& task, const SweepOptions& s) {
  const SimulateOptions base = task.simulate_options(c);
  SweepGrid grid;
  grid.alphas = s.alphas;
  grid.betas = s.betas.empty() ? std::vector<double>{c.beta} : s.betas;
  grid.pool_sizes = s.pool_sizes.empty() ? std::vector<std::size_t>{c.pool_size} : s.pool_sizes;
  grid.windows = s.windows.empty() ? std::vector<std::size_t>{c.window} : s.windows;
  grid.strategies.clear();
  if (s.strategies.empty()) grid.strategies.push_back(base.cfg.strategy);
  for (const auto& name : s.strategies) grid.strategies.push_back(parse_strategy(name));
  emit(sweep_table(sweep(base, grid), task.mode), c.output);
  return kOk;
}

struct BenchOptions {
  std::size_t vocab = 32000;
  std::size_t steps = 512;
  std::size_t reps = 5;
  std::size_t warmup = 1;
  std::optional<double> max_ratio;
};

int cmd_bench(const CommonOptions& c, const BenchOptions& b) {
  const DecodeConfig cfg = c.config();
  if (c.traces.size() > 1) throw ConfigError("bench replays a single trace");
  const Trace trace = c.traces.empty() ? generate_long_trace(b.vocab, b.steps, c.top_m, c.seed) : read_trace(c.traces.front());
  const BenchReport rep = bench(trace, cfg, b.reps, b.warmup);
  Table t({"decoder", "tokens", "mean_us", "p50_us", "p95_us"});
  const auto row = [&](const char* name, const LatencyStats& s) {
    t.add({std::string(name), static_cast<std::int64_t>(s.count), s.mean, s.p50, s.p95});
  };
  row("plain_argmax", rep.plain);
  row("resdec", rep.resdec);
  emit(t, c.output);
  std::printf("ratio %.3f\n", rep.ratio());
  if (b.max_ratio && rep.ratio() > *b.max_ratio) {
    std::fprintf(stderr, "overhead ratio %.3f above %.3f\n", rep.ratio(), *b.max_ratio);
    return kThresholdFailed;
  }
  return kOk;
}

int cmd_verify_theory(const CommonOptions& c, std::size_t instances, std::size_t joints) {
  const TheorySummary s = run_theory_suite(instances, joints, c.seed);
  emit(theory_table(s), c.output);
  if (!c.output.empty()) theory_table(s).write_csv(std::cout);
  const bool ok = s.entropy_ok() && s.monotone_ok() && s.mi_stated_ok() && s.mi_exact_ok();
  return ok ? kOk : kThresholdFailed;
}

int cmd_profile_jsd(const CommonOptions& c, const TaskOptions& task) {
  const std::vector<Trace> traces = c.traces.empty() ? task.traces(c.seed) : load_traces(c.traces);
  std::vector<std::vector<double>> curves;
  std::size_t after_third = 0, skipped = 0;
  for (const auto& tr : traces) {
    if (tr.records.size() < c.window + 1) {
      ++skipped;
      continue;
    }
    curves.push_back(trace_jsd_curve(tr, c.window, c.pool_size));
    const auto& curve = curves.back();
    after_third += static_cast<double>(curve_argmin(curve)) > static_cast<double>(curve.size() - 1) / 3.0;
  }
  const JsdProfile p = jsd_profile(curves);
  Table t({"position", "mean_jsd", "stddev_jsd", "traces"});
  for (std::size_t i = 0; i < p.mean.size(); ++i) {
    t.add({static_cast<std::int64_t>(i), p.mean[i], p.stddev[i], static_cast<std::int64_t>(p.traces)});
  }
  emit(t, c.output);
  std::fprintf(stderr, "minimum after first third: %zu/%zu (skipped %zu)\n", after_third, curves.size(), skipped);
  return kOk;
}

int cmd_offset_accuracy(const CommonOptions& c, const TaskOptions& task, const std::string& answers) {
  const std::vector<Trace> traces = c.traces.empty() ? task.traces(c.seed) : load_traces(c.traces);
  const std::vector<TokenId> answer_set = parse_ids(answers);
  if (answer_set.empty()) throw ConfigError("--answers needs at least one token id");
  const OffsetAccuracy oa = offset_accuracy(traces, answer_set, static_cast<int>(c.window));
  Table t({"offset", "accuracy", "count"});
  for (const auto& [d, a] : oa.accuracy) t.add({static_cast<std::int64_t>(d), a, static_cast<std::int64_t>(oa.counts.at(d))});
  emit(t, c.output);
  if (oa.skipped > 0) std::fprintf(stderr, "skipped %zu unlabelled trace(s)\n", oa.skipped);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ResDec residual decoding engine"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "decode a trace, the built-in Markov source or a stdio backend");
  add_common(run_cmd, run.common);
  run_cmd->add_option("--backend", run.backend, "logit backend (stdio)");
  run_cmd->add_option("--backend-cmd", run.backend_cmd, "shell command that speaks the step protocol");
  run_cmd->add_option("--prompt", run.prompt, "comma-separated prompt token ids");
  run_cmd->add_flag("--markov", run.markov, "decode the built-in drift transition table");
  run_cmd->add_option("--max-new-tokens", run.max_new_tokens)->capture_default_str();
  run_cmd->add_option("--eos", run.eos, "stop after emitting this token");
  run_cmd->add_option("--dump-trace", run.dump_trace, "write the session as a resdec-trace/1 file");

  // Simulator-driven commands default to K = 8: the synthetic vocabulary
  // has 16 tokens, 12 of them retained per step.
  CommonOptions sim_common;
  sim_common.pool_size = 8;
  TaskOptions sim_task;
  std::optional<double> min_accuracy;
  auto* sim_cmd = app.add_subcommand("simulate", "yes/no trials on synthetic traces: regular vs ResDec");
  add_common(sim_cmd, sim_common);
  sim_task.add(sim_cmd, 1000, "fixed");
  sim_cmd->add_option("--min-accuracy", min_accuracy, "exit 1 if ResDec accuracy is lower");

  CommonOptions sweep_common;
  sweep_common.pool_size = 8;
  TaskOptions sweep_task;
  SweepOptions sweep_opts;
  auto* sweep_cmd = app.add_subcommand("sweep", "ablation grid over alpha, beta, K, W and strategy");
  add_common(sweep_cmd, sweep_common);
  sweep_task.add(sweep_cmd, 1000, "mixed");
  sweep_cmd->add_option("--alphas", sweep_opts.alphas)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--betas", sweep_opts.betas, "default: --beta")->delimiter(',');
  sweep_cmd->add_option("--pool-sizes", sweep_opts.pool_sizes, "default: --pool-size")->delimiter(',');
  sweep_cmd->add_option("--windows", sweep_opts.windows, "default: --window")->delimiter(',');
  sweep_cmd->add_option("--strategies", sweep_opts.strategies, "default: --strategy")->delimiter(',');

  CommonOptions bench_common;
  BenchOptions bench_opts;
  auto* bench_cmd = app.add_subcommand("bench", "per-token wall time: plain argmax vs ResDec");
  add_common(bench_cmd, bench_common);
  bench_cmd->add_option("--vocab", bench_opts.vocab, "vocabulary of the generated trace")->capture_default_str();
  bench_cmd->add_option("--steps", bench_opts.steps, "length of the generated trace")->capture_default_str();
  bench_cmd->add_option("--reps", bench_opts.reps)->capture_default_str();
  bench_cmd->add_option("--warmup", bench_opts.warmup)->capture_default_str();
  bench_cmd->add_option("--max-ratio", bench_opts.max_ratio, "exit 1 if the ResDec/plain ratio is higher");

  CommonOptions theory_common;
  std::size_t instances = 1000, joints = 100;
  auto* theory_cmd = app.add_subcommand("verify-theory", "finite-difference checks of the entropy and MI derivatives");
  add_common(theory_cmd, theory_common);
  theory_cmd->add_option("--instances", instances, "random tilt families")->capture_default_str();
  theory_cmd->add_option("--joints", joints, "random discrete joints")->capture_default_str();

  CommonOptions profile_common;
  profile_common.pool_size = 8;
  TaskOptions profile_task;
  auto* profile_cmd = app.add_subcommand("profile-jsd", "mean adjacent-step JSD curve over traces");
  add_common(profile_cmd, profile_common);
  profile_task.add(profile_cmd, 200, "fixed");

  CommonOptions offset_common;
  offset_common.pool_size = 8;
  TaskOptions offset_task;
  std::string answers = "3,7";
  auto* offset_cmd = app.add_subcommand("offset-accuracy", "answer accuracy at offsets before the answer step");
  add_common(offset_cmd, offset_common);
  offset_task.add(offset_cmd, 200, "fixed");
  offset_cmd->add_option("--answers", answers, "comma-separated answer token ids")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*sim_cmd) return cmd_simulate(sim_common, sim_task, min_accuracy);
    if (*sweep_cmd) return cmd_sweep(sweep_common, sweep_task, sweep_opts);
    if (*bench_cmd) return cmd_bench(bench_common, bench_opts);
    if (*theory_cmd) return cmd_verify_theory(theory_common, instances, joints);
    if (*profile_cmd) return cmd_profile_jsd(profile_common, profile_task);
    if (*offset_cmd) return cmd_offset_accuracy(offset_common, offset_task, answers);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
