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

#include <iomanip>
#include <ostream>
#include <sstream>

#include "branchserve/simengine.h"

namespace branchserve {

namespace {

constexpr double kMatchedAccuracyTolerance = 0.001;  // 0.1 percentage points

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string level_str(const std::optional<DifficultyLabel>& d) { return d ? std::to_string(d->level()) : ""; }

template <typename T>
T get_field(const nlohmann::ordered_json& j, const char* group, const char* key) {
  try {
    return group ? j.at(group).at(key).get<T>() : j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("summary JSON: bad or missing field '") + (group ? std::string(group) + "." : "") + key +
                    "' (" + e.what() + ")");
  }
}

}  // namespace

Comparison compare_reports(const MetricsReport& a, const MetricsReport& b) {
  if (a.workload_hash != b.workload_hash) {
    throw DataError("reports cover different workloads (" + a.workload_hash + " vs " + b.workload_hash + ")");
  }
  Comparison cmp;
  auto add = [&](const char* name, double va, double vb) {
    MetricDelta d{name, va, vb, std::nullopt};
    if (va != 0.0) {
      d.delta_pct = (vb - va) / va * 100.0;
    } else if (vb == 0.0) {
      d.delta_pct = 0.0;
    }
    cmp.rows.push_back(std::move(d));
  };
  auto f = [](std::int64_t v) { return static_cast<double>(v); };
  add("latency_mean_ms", a.latency_mean_ms, b.latency_mean_ms);
  add("latency_p50_ms", f(a.latency_p50_ms), f(b.latency_p50_ms));
  add("latency_p95_ms", f(a.latency_p95_ms), f(b.latency_p95_ms));
  add("ttft_mean_ms", a.ttft_mean_ms, b.ttft_mean_ms);
  add("ttft_p50_ms", f(a.ttft_p50_ms), f(b.ttft_p50_ms));
  add("ttft_p95_ms", f(a.ttft_p95_ms), f(b.ttft_p95_ms));
  add("tokens_total_mean", a.tokens_total_mean, b.tokens_total_mean);
  add("tokens_decode_mean", a.tokens_decode_mean, b.tokens_decode_mean);
  add("tokens_probe_mean", a.tokens_probe_mean, b.tokens_probe_mean);
  add("accuracy", a.accuracy, b.accuracy);
  cmp.matched_accuracy = std::abs(b.accuracy - a.accuracy) <= kMatchedAccuracyTolerance + 1e-12;
  return cmp;
}

nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["policy"] = r.policy;
  j["schedule"] = r.schedule;
  j["requests"] = r.requests;
  j["seed"] = r.seed;
  j["workload_hash"] = r.workload_hash;
  j["latency"] = {{"mean_ms", r.latency_mean_ms}, {"p50_ms", r.latency_p50_ms}, {"p95_ms", r.latency_p95_ms}};
  j["ttft"] = {{"mean_ms", r.ttft_mean_ms}, {"p50_ms", r.ttft_p50_ms}, {"p95_ms", r.ttft_p95_ms}};
  j["tokens"] = {{"total_mean", r.tokens_total_mean},
                 {"decode_mean", r.tokens_decode_mean},
                 {"probe_mean", r.tokens_probe_mean}};
  j["accuracy"] = r.accuracy;
  j["busy_ms"] = r.busy_ms;
  j["interleaved_prefill_ms"] = r.interleaved_prefill_ms;
  j["config"] = r.config;
  return j;
}

MetricsReport report_from_json(const nlohmann::ordered_json& j) {
  MetricsReport r;
  r.policy = get_field<std::string>(j, nullptr, "policy");
  r.schedule = get_field<std::string>(j, nullptr, "schedule");
  r.requests = get_field<std::size_t>(j, nullptr, "requests");
  r.seed = get_field<std::uint64_t>(j, nullptr, "seed");
  r.workload_hash = get_field<std::string>(j, nullptr, "workload_hash");
  r.latency_mean_ms = get_field<double>(j, "latency", "mean_ms");
  r.latency_p50_ms = get_field<std::int64_t>(j, "latency", "p50_ms");
  r.latency_p95_ms = get_field<std::int64_t>(j, "latency", "p95_ms");
  r.ttft_mean_ms = get_field<double>(j, "ttft", "mean_ms");
  r.ttft_p50_ms = get_field<std::int64_t>(j, "ttft", "p50_ms");
  r.ttft_p95_ms = get_field<std::int64_t>(j, "ttft", "p95_ms");
  r.tokens_total_mean = get_field<double>(j, "tokens", "total_mean");
  r.tokens_decode_mean = get_field<double>(j, "tokens", "decode_mean");
  r.tokens_probe_mean = get_field<double>(j, "tokens", "probe_mean");
  r.accuracy = get_field<double>(j, nullptr, "accuracy");
  if (j.contains("busy_ms")) r.busy_ms = get_field<std::int64_t>(j, nullptr, "busy_ms");
  if (j.contains("interleaved_prefill_ms")) {
    r.interleaved_prefill_ms = get_field<std::int64_t>(j, nullptr, "interleaved_prefill_ms");
  }
  if (j.contains("config")) r.config = j.at("config");
  return r;
}

void write_results_csv(std::ostream& out, std::span<const RequestLogEntry> log) {
  out << "request_id,policy,schedule,arrival_ms,service_start_ms,first_token_ms,completion_ms,latency_ms,ttft_ms,"
         "tokens_decode,tokens_probe,answers,correct,termination_reason,difficulty_actual,difficulty_predicted\n";
  for (const auto& e : log) {
    out << csv_field(e.request_id) << ',' << policy_name(e.policy) << ',' << schedule_name(e.schedule) << ','
        << e.arrival.ms() << ',' << e.service_start.ms() << ',' << e.first_token.ms() << ',' << e.completion.ms()
        << ',' << e.latency().ms() << ',' << e.ttft().ms() << ',' << e.tokens_decode << ',' << e.tokens_probe << ','
        << e.tally.total() << ',' << (e.correct ? 1 : 0) << ',' << termination_reason_name(e.reason) << ','
        << level_str(e.difficulty_actual) << ',' << level_str(e.difficulty_predicted) << '\n';
  }
}

void write_comparison_csv(std::ostream& out, const Comparison& cmp) {
  out << "metric,a,b,delta_pct\n";
  for (const auto& row : cmp.rows) {
    out << row.metric << ',' << row.a << ',' << row.b << ',';
    if (row.delta_pct) out << *row.delta_pct;
    out << '\n';
  }
  out << "matched_accuracy,,," << (cmp.matched_accuracy ? 1 : 0) << '\n';
}

void write_comparison_text(std::ostream& out, const Comparison& cmp) {
  out << std::left << std::setw(20) << "metric" << std::right << std::setw(14) << "a" << std::setw(14) << "b"
      << std::setw(11) << "delta" << '\n';
  for (const auto& row : cmp.rows) {
    std::ostringstream delta;
    if (row.delta_pct) {
      delta << std::showpos << std::fixed << std::setprecision(1) << *row.delta_pct << '%';
    } else {
      delta << "n/a";
    }
    out << std::left << std::setw(20) << row.metric << std::right << std::fixed << std::setprecision(3)
        << std::setw(14) << row.a << std::setw(14) << row.b << std::setw(11) << delta.str() << '\n';
  }
  out.unsetf(std::ios::fixed);
  out << (cmp.matched_accuracy ? "matched accuracy" : "accuracy differs by more than 0.1 percentage points") << '\n';
}

}  // namespace branchserve
