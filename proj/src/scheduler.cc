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

#include "branchserve/scheduler.h"

#include <string>
#include <tuple>

namespace branchserve {

std::vector<TimePoint> gen_arrivals(const ArrivalConfig& config) {
  if (!(config.rate_qpm > 0.0)) throw UsageError("arrival rate must be > 0 queries per minute");
  if (config.n_requests < 1) throw UsageError("need at least one arrival");
  Rng rng(config.seed);
  std::exponential_distribution<double> gap(config.rate_qpm / 60000.0);
  std::vector<TimePoint> out;
  out.reserve(config.n_requests);
  double t = 0.0;
  std::int64_t prev = -1;
  for (std::size_t i = 0; i < config.n_requests; ++i) {
    t += gap(rng);
    const std::int64_t ms = std::max(prev + 1, static_cast<std::int64_t>(std::llround(t)));
    out.emplace_back(ms);
    prev = ms;
  }
  return out;
}

SchedulePolicy parse_schedule(std::string_view name) {
  if (name == "fcfs") return SchedulePolicy::kFcfs;
  if (name == "easiest-actual") return SchedulePolicy::kEasiestActual;
  if (name == "easiest-predicted") return SchedulePolicy::kEasiestPredicted;
  throw UsageError("unknown schedule '" + std::string(name) + "' (expected fcfs, easiest-actual or easiest-predicted)");
}

std::string_view schedule_name(SchedulePolicy policy) {
  switch (policy) {
    case SchedulePolicy::kFcfs: return "fcfs";
    case SchedulePolicy::kEasiestActual: return "easiest-actual";
    case SchedulePolicy::kEasiestPredicted: return "easiest-predicted";
  }
  return "?";
}

QueueEntry next_request(std::vector<QueueEntry>& queue, SchedulePolicy policy, TimePoint now) {
  auto eligible = [&](const QueueEntry& e) {
    if (e.arrival > now) return false;
    if (policy == SchedulePolicy::kEasiestPredicted) {
      return e.prefill_done && *e.prefill_done <= now && e.predicted_difficulty.has_value();
    }
    return true;
  };
  auto level = [&](const QueueEntry& e) -> int {
    switch (policy) {
      case SchedulePolicy::kFcfs: return 0;
      case SchedulePolicy::kEasiestActual:
        if (!e.actual_difficulty) throw std::invalid_argument("easiest-actual scheduling needs difficulty labels");
        return e.actual_difficulty->level();
      case SchedulePolicy::kEasiestPredicted: return e.predicted_difficulty->level();
    }
    return 0;
  };

  auto best = queue.end();
  for (auto it = queue.begin(); it != queue.end(); ++it) {
    if (!eligible(*it)) continue;
    if (best == queue.end() ||
        std::make_tuple(level(*it), it->arrival, it->seq) < std::make_tuple(level(*best), best->arrival, best->seq)) {
      best = it;
    }
  }
  if (best == queue.end()) throw std::invalid_argument("no eligible request");
  QueueEntry out = *best;
  queue.erase(best);
  return out;
}

}  // namespace branchserve
