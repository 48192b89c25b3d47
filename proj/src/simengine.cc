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

#include "branchserve/simengine.h"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace branchserve {

void TimingModel::validate() const {
  if (!(t_base_ms > 0.0)) throw UsageError("timing: t_base must be > 0");
  if (!(t_scale_ms >= 0.0)) throw UsageError("timing: t_scale must be >= 0");
  if (!(t_prefill_ms >= 0.0)) throw UsageError("timing: t_prefill must be >= 0");
}

Duration round_time(int active_branches, std::int64_t tokens, const TimingModel& model) {
  if (active_branches < 1) throw std::invalid_argument("round_time needs at least one active branch");
  const double per_token = model.t_base_ms + model.t_scale_ms * static_cast<double>(active_branches - 1);
  return Duration(std::llround(static_cast<double>(tokens) * per_token));
}

Duration probe_time(int probes, std::int64_t probe_cost_tokens, const TimingModel& model) {
  if (probes <= 0) return Duration(0);
  return round_time(probes, probe_cost_tokens, model);
}

Duration prefill_time(std::int64_t prompt_tokens, const TimingModel& model) {
  return Duration(std::llround(static_cast<double>(prompt_tokens) * model.t_prefill_ms));
}

std::string workload_hash_hex(const Workload& workload) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(workload.hash()));
  return buf;
}

namespace {

nlohmann::ordered_json config_echo(const SimulationSetup& s) {
  const auto& o = s.orchestrator;
  nlohmann::ordered_json j;
  j["c"] = o.c;
  j["interval"] = o.interval;
  if (std::isfinite(o.tau)) {
    j["tau"] = o.tau;
  } else {
    j["tau"] = o.tau > 0 ? "inf" : "-inf";
  }
  j["S"] = o.streak;
  j["lambda"] = o.lambda;
  j["alpha"] = o.alpha;
  j["beta"] = o.beta;
  j["token_cap"] = o.token_cap;
  j["probe_cost_tokens"] = o.probe_cost_tokens;
  j["dynasor_d"] = o.dynasor_d;
  j["short_m"] = o.short_m;
  j["rho"] = s.predictor.config().rho;
  j["t_base_ms"] = s.timing.t_base_ms;
  j["t_scale_ms"] = s.timing.t_scale_ms;
  j["t_prefill_ms"] = s.timing.t_prefill_ms;
  if (s.difficulty) {
    switch (s.difficulty->mode()) {
      case DifficultyMode::kActual: j["difficulty_mode"] = "actual"; break;
      case DifficultyMode::kMlp: j["difficulty_mode"] = "mlp"; break;
      case DifficultyMode::kNoisyLabel: j["difficulty_mode"] = "noisy-label"; break;
    }
  }
  return j;
}

}  // namespace

SimulationResult run_simulation(const Workload& workload, std::span<const TimePoint> arrivals,
                                const SimulationSetup& setup) {
  const std::size_t n = workload.size();
  if (arrivals.size() != n) {
    throw DataError("workload has " + std::to_string(n) + " requests but " + std::to_string(arrivals.size()) +
                    " arrivals were given");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (arrivals[i] < arrivals[i - 1]) throw DataError("arrivals must be sorted");
  }
  setup.orchestrator.validate();
  setup.timing.validate();
  const bool predicted = setup.schedule == SchedulePolicy::kEasiestPredicted;
  if (setup.schedule == SchedulePolicy::kEasiestActual && !workload.has_difficulty_labels()) {
    throw UsageError("easiest-actual scheduling requires a difficulty label on every request");
  }
  if (predicted) {
    if (!setup.difficulty) {
      throw UsageError("easiest-predicted scheduling requires a difficulty predictor (noisy-label or mlp)");
    }
    if (setup.difficulty->mode() == DifficultyMode::kMlp && setup.difficulty_activations.size() != n) {
      throw DataError("mlp difficulty prediction needs one activation vector per request (" + std::to_string(n) +
                      "), got " + std::to_string(setup.difficulty_activations.size()));
    }
  }

  SimulationResult result;
  result.log.reserve(n);
  std::vector<QueueEntry> queue;
  std::size_t next_arrival = 0;
  TimePoint now(0);
  std::int64_t busy = 0;
  std::int64_t interleaved = 0;

  auto admit = [&] {
    while (next_arrival < n && arrivals[next_arrival] <= now) {
      QueueEntry e;
      e.request_index = next_arrival;
      e.seq = next_arrival;
      e.arrival = arrivals[next_arrival];
      e.actual_difficulty = workload.requests[next_arrival].difficulty;
      queue.push_back(e);
      ++next_arrival;
    }
  };
  // Prefill of newly arrived requests runs at completion boundaries so their
  // difficulty can be predicted before the next pick.
  auto prefill_pending = [&] {
    bool any = false;
    for (auto& e : queue) {
      if (e.prefill_done) continue;
      const auto& trace = workload.requests[e.request_index];
      const Duration d = prefill_time(trace.prompt_tokens, setup.timing);
      now += d;
      busy += d.ms();
      interleaved += d.ms();
      e.prefill_done = now;
      Rng rng = derive_rng(setup.seed, e.request_index, 2);
      std::span<const float> act;
      if (!setup.difficulty_activations.empty()) act = setup.difficulty_activations[e.request_index];
      e.predicted_difficulty = setup.difficulty->predict(trace.difficulty, act, rng);
      any = true;
    }
    return any;
  };

  while (result.log.size() < n) {
    admit();
    if (predicted) {
      while (prefill_pending()) admit();
    }
    if (queue.empty()) {
      now = std::max(now, arrivals[next_arrival]);
      continue;
    }
    QueueEntry entry = next_request(queue, setup.schedule, now);
    const RequestTrace& trace = workload.requests[entry.request_index];

    RequestLogEntry row;
    row.request_index = entry.request_index;
    row.request_id = trace.id;
    row.policy = setup.policy;
    row.schedule = setup.schedule;
    row.arrival = entry.arrival;
    row.service_start = now;
    row.difficulty_actual = trace.difficulty;
    row.difficulty_predicted = entry.predicted_difficulty;

    if (!predicted) {
      const Duration d = prefill_time(trace.prompt_tokens, setup.timing);
      now += d;
      busy += d.ms();
    }
    Rng rng = derive_rng(setup.seed, entry.request_index, 1);
    const RequestOutcome outcome = run_policy(setup.policy, trace, setup.orchestrator, setup.predictor, rng);
    bool first = true;
    for (const auto& round : outcome.round_log) {
      const Duration decode = round_time(std::max(1, round.decoding_branches), round.max_decode_tokens, setup.timing);
      now += decode;
      busy += decode.ms();
      if (first) {
        row.first_token = now;
        first = false;
      }
      const Duration probe = probe_time(round.probes, setup.orchestrator.probe_cost_tokens, setup.timing);
      now += probe;
      busy += probe.ms();
    }
    if (first) row.first_token = now;
    row.completion = now;
    row.tokens_decode = outcome.tokens_decode;
    row.tokens_probe = outcome.tokens_probe;
    row.tally = outcome.answers;
    row.final_answer = outcome.final;
    row.correct = !outcome.final.is_none() && outcome.final == trace.ground_truth;
    row.reason = outcome.reason;
    result.log.push_back(std::move(row));
  }

  result.report = summarize(result.log);
  result.report.policy = std::string(policy_name(setup.policy));
  result.report.schedule = std::string(schedule_name(setup.schedule));
  result.report.seed = setup.seed;
  result.report.workload_hash = workload_hash_hex(workload);
  result.report.busy_ms = busy;
  result.report.interleaved_prefill_ms = interleaved;
  result.report.config = config_echo(setup);
  return result;
}

MetricsReport summarize(std::span<const RequestLogEntry> log) {
  MetricsReport r;
  r.requests = log.size();
  if (log.empty()) return r;
  std::vector<std::int64_t> lat;
  std::vector<std::int64_t> ttft;
  double tok_total = 0.0;
  double tok_decode = 0.0;
  double tok_probe = 0.0;
  std::size_t correct = 0;
  for (const auto& e : log) {
    lat.push_back(e.latency().ms());
    ttft.push_back(e.ttft().ms());
    tok_total += static_cast<double>(e.tokens_total());
    tok_decode += static_cast<double>(e.tokens_decode);
    tok_probe += static_cast<double>(e.tokens_probe);
    correct += e.correct ? 1 : 0;
  }
  const double n = static_cast<double>(log.size());
  auto mean = [n](const std::vector<std::int64_t>& v) {
    return static_cast<double>(std::accumulate(v.begin(), v.end(), std::int64_t{0})) / n;
  };
  r.latency_mean_ms = mean(lat);
  r.latency_p50_ms = percentile(lat, 50.0);
  r.latency_p95_ms = percentile(lat, 95.0);
  r.ttft_mean_ms = mean(ttft);
  r.ttft_p50_ms = percentile(ttft, 50.0);
  r.ttft_p95_ms = percentile(ttft, 95.0);
  r.tokens_total_mean = tok_total / n;
  r.tokens_decode_mean = tok_decode / n;
  r.tokens_probe_mean = tok_probe / n;
  r.accuracy = static_cast<double>(correct) / n;
  return r;
}

}  // namespace branchserve
