/* Copyright 2026 The BranchServe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "branchserve/cli.h"

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>

#include "branchserve/mlp.h"
#include "branchserve/predictor.h"
#include "branchserve/simengine.h"
#include "branchserve/workload.h"

namespace branchserve {

namespace {

namespace fs = std::filesystem;

// Shortest round-trip decimal form of a double.
std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return nlohmann::json(v).dump();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

// Config files hold flag values without the leading dashes, either as a flat
// JSON object or as key=value lines. They are spliced in ahead of the real
// arguments, and every option keeps its last value, so explicit flags win.
std::vector<std::string> config_args(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> out;
  auto push = [&](const std::string& key, const std::string& value) {
    out.push_back("--" + key);
    out.push_back(value);
  };
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError("config " + path.string() + ": malformed JSON (" + e.what() + ")");
    }
    for (const auto& [key, value] : j.items()) {
      if (value.is_string()) {
        push(key, value.get<std::string>());
      } else if (value.is_number() || value.is_boolean()) {
        push(key, value.dump());
      } else {
        throw UsageError("config " + path.string() + ": value of '" + key + "' must be a scalar");
      }
    }
    return out;
  }
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config " + path.string() + " line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    push(key, value);
  }
  return out;
}

// Splices `--config FILE` contents in right after the subcommand name.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    if (args.empty() || args[0].starts_with("-")) throw UsageError("--config must follow a command");
    std::vector<std::string> out{args[0]};
    auto extra = config_args(path);
    out.insert(out.end(), extra.begin(), extra.end());
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
  }
  return args;
}

struct GenOptions {
  std::string preset = "math-like";
  long long requests = 500;
  std::uint64_t seed = 0;
  std::string out;
  int templates = 0;
  double sigma = -1.0;
};

struct RunOptions {
  std::string trace;
  std::string synthetic;
  long long synthetic_requests = 500;
  std::uint64_t workload_seed = 0;
  std::string policy = "duchess";
  std::string schedule = "fcfs";
  std::string preset = "math-like";
  std::optional<int> c;
  std::optional<long long> interval;
  std::optional<double> tau;
  std::optional<double> tau_pct;
  std::optional<int> streak;
  std::optional<double> lambda;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<long long> token_cap;
  std::optional<long long> probe_cost;
  std::optional<int> dynasor_d;
  std::optional<int> short_m;
  std::string validation_trace;
  double rho = 0.8;
  TimingModel timing;
  double qpm = 2.0;
  std::optional<std::uint64_t> arrival_seed;
  std::uint64_t seed = 0;
  int trials = 1;
  std::string difficulty_mode;
  std::string confusion;
  std::string difficulty_mlp;
  std::string activations;
  std::string out_csv = "results.csv";
  std::string out_json = "summary.json";
};

struct CompareOptions {
  std::string a;
  std::string b;
  std::string out_csv;
};

struct CalibrateOptions {
  std::string predictions;
  double pct = 80.0;
};

struct ProbeOptions {
  std::string weights;
  std::string activations;
  std::string out;
};

int cmd_gen(const GenOptions& o, std::ostream& out) {
  if (o.requests < 1) throw UsageError("gen: --requests must be >= 1");
  if (o.out.empty()) throw UsageError("gen: --out is required");
  SyntheticParams params = SyntheticParams::preset(o.preset);
  if (o.templates > 0) params.templates_per_request = o.templates;
  if (o.sigma >= 0.0) {
    for (auto& lv : params.levels) lv.sigma = o.sigma;
  }
  const Workload w = generate_synthetic(params, static_cast<std::size_t>(o.requests), o.seed);
  save_trace(w, o.out);

  std::array<int, DifficultyLabel::kNumLevels> mix{};
  std::size_t min_t = SIZE_MAX;
  std::size_t max_t = 0;
  for (const auto& r : w.requests) {
    if (r.difficulty) ++mix[static_cast<std::size_t>(r.difficulty->level() - 1)];
    min_t = std::min(min_t, r.templates.size());
    max_t = std::max(max_t, r.templates.size());
  }
  out << "wrote " << w.size() << " requests to " << o.out << " (hash " << workload_hash_hex(w) << ")\n";
  if (params.emit_difficulty) {
    out << "level mix:";
    for (std::size_t d = 0; d < mix.size(); ++d) out << " L" << d + 1 << "=" << mix[d];
    out << "\n";
  } else {
    out << "level mix: unlabeled\n";
  }
  out << "templates per request: " << min_t;
  if (max_t != min_t) out << ".." << max_t;
  out << "\n";
  return kExitOk;
}

struct PreparedRun {
  Workload workload;
  SimulationSetup setup;
  std::optional<double> tau_pct_used;
};

PreparedRun prepare_run(const RunOptions& o) {
  PreparedRun p;
  if (o.trace.empty() == o.synthetic.empty()) throw UsageError("run: give exactly one of --trace or --synthetic");
  if (!o.trace.empty()) {
    p.workload = load_trace(o.trace);
  } else {
    if (o.synthetic_requests < 1) throw UsageError("run: --requests must be >= 1");
    p.workload = generate_synthetic(SyntheticParams::preset(o.synthetic), static_cast<std::size_t>(o.synthetic_requests),
                                    o.workload_seed);
  }
  if (p.workload.size() == 0) throw DataError("run: workload is empty");

  auto& s = p.setup;
  s.policy = parse_policy(o.policy);
  s.schedule = parse_schedule(o.schedule);
  const OrchestratorPreset preset = orchestrator_preset(o.preset);
  auto& cfg = s.orchestrator;
  cfg = preset.config;
  if (o.c) cfg.c = *o.c;
  if (o.interval) cfg.interval = *o.interval;
  if (o.streak) cfg.streak = *o.streak;
  if (o.lambda) cfg.lambda = *o.lambda;
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.beta) cfg.beta = *o.beta;
  if (o.token_cap) cfg.token_cap = *o.token_cap;
  if (o.probe_cost) cfg.probe_cost_tokens = *o.probe_cost;
  if (o.dynasor_d) cfg.dynasor_d = *o.dynasor_d;
  if (o.short_m) cfg.short_m = *o.short_m;
  cfg.validate();

  s.timing = o.timing;
  s.seed = o.seed;
  s.predictor = BranchPredictor(SyntheticPredictorConfig{o.rho});

  if (o.tau) {
    cfg.tau = *o.tau;
  } else {
    const double pct = o.tau_pct.value_or(preset.tau_pct);
    const Workload validation = o.validation_trace.empty() ? p.workload : load_trace(o.validation_trace);
    const auto preds = collect_validation_predictions(validation, s.predictor, cfg.interval, cfg.token_cap,
                                                      o.seed ^ 0x7a17ULL);
    if (preds.empty()) throw DataError("run: no validation predictions to calibrate tau from");
    cfg.tau = calibrate_tau(preds, pct);
    p.tau_pct_used = pct;
  }

  if (!o.difficulty_mode.empty()) {
    if (o.difficulty_mode == "actual") {
      s.difficulty = DifficultyPredictor::actual();
    } else if (o.difficulty_mode == "noisy-label") {
      s.difficulty = DifficultyPredictor::noisy(o.confusion.empty() ? ConfusionMatrix::reported_default()
                                                                    : ConfusionMatrix::load(o.confusion));
    } else if (o.difficulty_mode == "mlp") {
      if (o.difficulty_mlp.empty() || o.activations.empty()) {
        throw UsageError("run: --difficulty-mode mlp needs --difficulty-mlp and --activations");
      }
      MlpWeights w = load_mlp(o.difficulty_mlp);
      s.difficulty_activations = load_activations(o.activations, w.input_dim);
      s.difficulty = DifficultyPredictor::mlp(std::move(w));
    } else {
      throw UsageError("run: unknown --difficulty-mode '" + o.difficulty_mode +
                       "' (expected actual, noisy-label or mlp)");
    }
  }
  if (s.schedule == SchedulePolicy::kEasiestPredicted && !s.difficulty) {
    throw UsageError(
        "run: --schedule easiest-predicted needs a difficulty predictor; pass --difficulty-mode noisy-label "
        "(optionally --confusion FILE) or --difficulty-mode mlp with --difficulty-mlp and --activations");
  }
  return p;
}

fs::path with_seed_suffix(const fs::path& path, std::uint64_t seed) {
  fs::path out = path;
  out.replace_filename(path.stem().string() + ".seed" + std::to_string(seed) + path.extension().string());
  return out;
}

int cmd_run(const RunOptions& o, std::ostream& out) {
  if (o.trials < 1) throw UsageError("run: --trials must be >= 1");
  if (!(o.qpm > 0.0)) throw UsageError("run: --qpm must be > 0");
  const PreparedRun prep = prepare_run(o);
  const std::uint64_t arrival_seed = o.arrival_seed.value_or(o.seed);

  auto run_trial = [&](int k) {
    SimulationSetup setup = prep.setup;
    setup.seed = o.seed + static_cast<std::uint64_t>(k);
    const auto arrivals = gen_arrivals({o.qpm, prep.workload.size(), arrival_seed + static_cast<std::uint64_t>(k)});
    SimulationResult r = run_simulation(prep.workload, arrivals, setup);
    r.report.config["qpm"] = o.qpm;
    r.report.config["arrival_seed"] = arrival_seed + static_cast<std::uint64_t>(k);
    r.report.config["preset"] = o.preset;
    if (prep.tau_pct_used) r.report.config["tau_pct"] = *prep.tau_pct_used;
    return r;
  };

  std::vector<SimulationResult> results;
  if (o.trials == 1) {
    results.push_back(run_trial(0));
  } else {
    std::vector<std::future<SimulationResult>> futures;
    for (int k = 0; k < o.trials; ++k) futures.push_back(std::async(std::launch::async, run_trial, k));
    for (auto& f : futures) results.push_back(f.get());
  }

  nlohmann::ordered_json summary;
  if (o.trials == 1) {
    std::ostringstream csv;
    write_results_csv(csv, results[0].log);
    write_file(o.out_csv, csv.str());
    summary = report_to_json(results[0].report);
  } else {
    std::vector<RequestLogEntry> pooled;
    nlohmann::ordered_json trials = nlohmann::ordered_json::array();
    for (const auto& r : results) {
      std::ostringstream csv;
      write_results_csv(csv, r.log);
      write_file(with_seed_suffix(o.out_csv, r.report.seed), csv.str());
      pooled.insert(pooled.end(), r.log.begin(), r.log.end());
      trials.push_back(report_to_json(r.report));
    }
    MetricsReport merged = summarize(pooled);
    merged.policy = results[0].report.policy;
    merged.schedule = results[0].report.schedule;
    merged.seed = o.seed;
    merged.workload_hash = results[0].report.workload_hash;
    for (const auto& r : results) {
      merged.busy_ms += r.report.busy_ms;
      merged.interleaved_prefill_ms += r.report.interleaved_prefill_ms;
    }
    merged.config = results[0].report.config;
    merged.config["trials"] = o.trials;
    summary = report_to_json(merged);
    summary["trials"] = std::move(trials);
  }
  write_file(o.out_json, summary.dump(2) + "\n");

  const auto& lat = summary["latency"];
  out << summary["policy"].get<std::string>() << "/" << summary["schedule"].get<std::string>()
      << ": accuracy=" << num(summary["accuracy"].get<double>())
      << " mean_latency_s=" << num(std::round(lat["mean_ms"].get<double>()) / 1000.0)
      << " tokens_per_request=" << num(std::round(summary["tokens"]["total_mean"].get<double>() * 10.0) / 10.0)
      << " tau=" << num(prep.setup.orchestrator.tau) << "\n";
  return kExitOk;
}

MetricsReport load_report(const std::string& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": malformed JSON (" + e.what() + ")");
  }
  return report_from_json(j);
}

int cmd_compare(const CompareOptions& o, std::ostream& out) {
  const MetricsReport a = load_report(o.a);
  const MetricsReport b = load_report(o.b);
  const Comparison cmp = compare_reports(a, b);
  out << "a: " << o.a << " (" << a.policy << "/" << a.schedule << ")\n";
  out << "b: " << o.b << " (" << b.policy << "/" << b.schedule << ")\n";
  write_comparison_text(out, cmp);
  if (!o.out_csv.empty()) {
    std::ostringstream csv;
    write_comparison_csv(csv, cmp);
    write_file(o.out_csv, csv.str());
  }
  return kExitOk;
}

int cmd_calibrate_tau(const CalibrateOptions& o, std::ostream& out) {
  if (!(o.pct > 0.0 && o.pct <= 100.0)) throw UsageError("calibrate-tau: --pct must be in (0, 100]");
  std::istringstream in(read_file(o.predictions));
  std::vector<double> preds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      preds.push_back(std::stod(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw DataError(o.predictions + " line " + std::to_string(lineno) + ": not a number");
    }
  }
  if (preds.empty()) throw DataError("calibrate-tau: " + o.predictions + " holds no predictions");
  out << num(calibrate_tau(preds, o.pct)) << " (nearest-rank P" << num(o.pct) << " of " << preds.size()
      << " predictions)\n";
  return kExitOk;
}

int cmd_probe_mlp(const ProbeOptions& o, std::ostream& out) {
  const MlpModel model(load_mlp(o.weights));
  const auto acts = load_activations(o.activations, model.weights().input_dim);
  std::ostringstream lines;
  for (const auto& a : acts) {
    const MlpOutput y = model.forward(a);
    if (model.weights().is_correctness_head()) {
      lines << num(y.probs[0]) << "\n";
    } else {
      lines << y.argmax() + 1;
      for (double p : y.probs) lines << "," << num(p);
      lines << "\n";
    }
  }
  if (o.out.empty()) {
    out << lines.str();
  } else {
    write_file(o.out, lines.str());
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-branch reasoning serving simulator", "branchserve"};
  app.option_defaults()->take_last();
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic JSONL workload");
  gen_cmd->add_option("--preset", gen.preset, "math-like | gsm8k-like | mmlu-like")->capture_default_str();
  gen_cmd->add_option("-n,--requests", gen.requests, "Number of requests")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("-o,--out", gen.out, "Output JSONL path")->required();
  gen_cmd->add_option("--templates", gen.templates, "Branch templates per request (default from preset)");
  gen_cmd->add_option("--sigma", gen.sigma, "Override log-space length dispersion for every level");

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Simulate a serving run");
  run_cmd->add_option("-t,--trace", run.trace, "Workload JSONL");
  run_cmd->add_option("--synthetic", run.synthetic, "Generate the workload from a preset instead of --trace");
  run_cmd->add_option("-n,--requests", run.synthetic_requests, "Requests for --synthetic")->capture_default_str();
  run_cmd->add_option("--workload-seed", run.workload_seed, "Seed for --synthetic")->capture_default_str();
  run_cmd->add_option("--policy", run.policy, "duchess | default-sc | short-mk | dynasor")->capture_default_str();
  run_cmd->add_option("--schedule", run.schedule, "fcfs | easiest-actual | easiest-predicted")->capture_default_str();
  run_cmd->add_option("--preset", run.preset, "Orchestrator knobs: gsm8k-like | mmlu-like | math-like")
      ->capture_default_str();
  run_cmd->add_option("--c", run.c, "Max parallel branches");
  run_cmd->add_option("--interval", run.interval, "Tokens per branch between predictions");
  run_cmd->add_option("--tau", run.tau, "Early-termination threshold (overrides --tau-pct)");
  run_cmd->add_option("--tau-pct", run.tau_pct, "Calibrate tau as this percentile of validation predictions");
  run_cmd->add_option("--S,--streak", run.streak, "Consecutive rounds above tau");
  run_cmd->add_option("--lambda", run.lambda, "Branch-out temperature");
  run_cmd->add_option("--alpha", run.alpha, "Consensus fraction");
  run_cmd->add_option("--beta", run.beta, "Coverage fraction");
  run_cmd->add_option("--token-cap", run.token_cap, "Max tokens per branch");
  run_cmd->add_option("--probe-cost", run.probe_cost, "Tokens per answer probe");
  run_cmd->add_option("--dynasor-d", run.dynasor_d, "Consistent probes for the Dynasor baseline");
  run_cmd->add_option("--short-m", run.short_m, "m for Short-m@k");
  run_cmd->add_option("--validation-trace", run.validation_trace, "Workload used to calibrate tau");
  run_cmd->add_option("--rho", run.rho, "Synthetic predictor quality in [0,1]")->capture_default_str();
  run_cmd->add_option("--t-base", run.timing.t_base_ms, "ms per token at batch 1")->capture_default_str();
  run_cmd->add_option("--t-scale", run.timing.t_scale_ms, "ms per token per extra branch")->capture_default_str();
  run_cmd->add_option("--t-prefill", run.timing.t_prefill_ms, "ms per prompt token")->capture_default_str();
  run_cmd->add_option("--qpm", run.qpm, "Mean Poisson arrival rate (queries/minute)")->capture_default_str();
  run_cmd->add_option("--arrival-seed", run.arrival_seed, "Arrival schedule seed (default: --seed)");
  run_cmd->add_option("--seed", run.seed, "Policy/predictor seed")->capture_default_str();
  run_cmd->add_option("--trials", run.trials, "Independent trials with consecutive seeds")->capture_default_str();
  run_cmd->add_option("--difficulty-mode", run.difficulty_mode, "actual | noisy-label | mlp");
  run_cmd->add_option("--confusion", run.confusion, "5x5 confusion matrix for noisy-label mode");
  run_cmd->add_option("--difficulty-mlp", run.difficulty_mlp, "Complexity MLP manifest for mlp mode");
  run_cmd->add_option("--activations", run.activations, "Per-request activation vectors for mlp mode");
  run_cmd->add_option("--out-csv", run.out_csv, "Per-request results CSV")->capture_default_str();
  run_cmd->add_option("--out-json", run.out_json, "Summary JSON")->capture_default_str();

  CompareOptions cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Relative deltas between two summary JSONs (b vs a)");
  cmp_cmd->add_option("a,--a", cmp.a, "Baseline summary JSON")->required();
  cmp_cmd->add_option("b,--b", cmp.b, "Candidate summary JSON")->required();
  cmp_cmd->add_option("--out-csv", cmp.out_csv, "Also write the delta table as CSV");

  CalibrateOptions cal;
  auto* cal_cmd = app.add_subcommand("calibrate-tau", "Threshold from validation predictions (one per line)");
  cal_cmd->add_option("predictions,--predictions", cal.predictions, "Predictions file")->required();
  cal_cmd->add_option("--pct", cal.pct, "Percentile in (0,100]")->capture_default_str();

  ProbeOptions probe;
  auto* probe_cmd = app.add_subcommand("probe-mlp", "Evaluate an MLP weight file over activation vectors");
  probe_cmd->add_option("--weights", probe.weights, "Weight manifest")->required();
  probe_cmd->add_option("--activations", probe.activations, "Activation vectors (.bin/.f32 or text)")->required();
  probe_cmd->add_option("-o,--out", probe.out, "Output file (default stdout)");

  // Consumed by expand_config before parsing; registered for --help and validation.
  std::string config_path;
  for (auto* sub : {gen_cmd, run_cmd, cmp_cmd, cal_cmd, probe_cmd}) {
    sub->add_option("--config", config_path, "Flag values as key=value lines or a flat JSON object");
  }

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen, out);
    if (*run_cmd) return cmd_run(run, out);
    if (*cmp_cmd) return cmd_compare(cmp, out);
    if (*cal_cmd) return cmd_calibrate_tau(cal, out);
    if (*probe_cmd) return cmd_probe_mlp(probe, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace branchserve
