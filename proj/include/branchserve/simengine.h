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

#pragma once

#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "branchserve/core.h"
#include "branchserve/orchestrator.h"
#include "branchserve/predictor.h"
#include "branchserve/scheduler.h"
#include "branchserve/workload.h"

namespace branchserve {

// Linear-in-batch decode cost.
struct TimingModel {
  double t_base_ms = 20.0;    // per token at batch 1
  double t_scale_ms = 0.0;    // per token per additional concurrent branch
  double t_prefill_ms = 0.1;  // per prompt token

  void validate() const;
};

// tokens * (t_base + t_scale * (active_branches - 1)), rounded to whole ms.
Duration round_time(int active_branches, std::int64_t tokens, const TimingModel& model);
// Probes issued in one round run as a single batch of probe_cost_tokens.
Duration probe_time(int probes, std::int64_t probe_cost_tokens, const TimingModel& model);
Duration prefill_time(std::int64_t prompt_tokens, const TimingModel& model);

struct RequestLogEntry {
  std::size_t request_index = 0;
  std::string request_id;
  Policy policy = Policy::kDuchess;
  SchedulePolicy schedule = SchedulePolicy::kFcfs;
  TimePoint arrival;
  TimePoint service_start;
  TimePoint first_token;
  TimePoint completion;
  std::int64_t tokens_decode = 0;
  std::int64_t tokens_probe = 0;
  VoteTally tally;
  Answer final_answer;
  bool correct = false;
  TerminationReason reason = TerminationReason::kNone;
  std::optional<DifficultyLabel> difficulty_actual;
  std::optional<DifficultyLabel> difficulty_predicted;

  Duration latency() const { return completion - arrival; }
  Duration ttft() const { return first_token - arrival; }
  Duration service() const { return completion - service_start; }
  std::int64_t tokens_total() const { return tokens_decode + tokens_probe; }
};

struct MetricsReport {
  std::string policy;
  std::string schedule;
  std::size_t requests = 0;
  std::uint64_t seed = 0;
  std::string workload_hash;  // 16 hex digits

  double latency_mean_ms = 0.0;
  std::int64_t latency_p50_ms = 0;
  std::int64_t latency_p95_ms = 0;
  double ttft_mean_ms = 0.0;
  std::int64_t ttft_p50_ms = 0;
  std::int64_t ttft_p95_ms = 0;
  double tokens_total_mean = 0.0;
  double tokens_decode_mean = 0.0;
  double tokens_probe_mean = 0.0;
  double accuracy = 0.0;

  std::int64_t busy_ms = 0;                 // server time spent on any work
  std::int64_t interleaved_prefill_ms = 0;  // prefill run outside a request's service window

  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

struct SimulationSetup {
  OrchestratorConfig orchestrator;
  Policy policy = Policy::kDuchess;
  SchedulePolicy schedule = SchedulePolicy::kFcfs;
  TimingModel timing;
  std::uint64_t seed = 0;
  BranchPredictor predictor;
  std::optional<DifficultyPredictor> difficulty;
  // One vector per request, for an mlp difficulty predictor.
  std::vector<std::vector<float>> difficulty_activations;
};

struct SimulationResult {
  MetricsReport report;
  std::vector<RequestLogEntry> log;  // in service order
};

// Serial single-server simulation. `arrivals[i]` is request i's arrival and
// must be non-decreasing. Per-request randomness is derived from (seed, i),
// so a request's outcome does not depend on the schedule.
SimulationResult run_simulation(const Workload& workload, std::span<const TimePoint> arrivals,
                                const SimulationSetup& setup);

// Aggregates a log. Percentiles are nearest-rank.
MetricsReport summarize(std::span<const RequestLogEntry> log);

std::string workload_hash_hex(const Workload& workload);

struct MetricDelta {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  std::optional<double> delta_pct;  // (b - a) / a * 100; empty when a == 0 and b != 0
};

struct Comparison {
  std::vector<MetricDelta> rows;
  bool matched_accuracy = false;  // |accuracy delta| <= 0.1 percentage points
};

// Throws DataError when the reports cover different workloads.
Comparison compare_reports(const MetricsReport& a, const MetricsReport& b);

nlohmann::ordered_json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::ordered_json& json);

// Results CSV, one row per request.
void write_results_csv(std::ostream& out, std::span<const RequestLogEntry> log);
void write_comparison_csv(std::ostream& out, const Comparison& cmp);
void write_comparison_text(std::ostream& out, const Comparison& cmp);

}  // namespace branchserve
