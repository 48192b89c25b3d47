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

#include <optional>
#include <string_view>
#include <vector>

#include "branchserve/core.h"

namespace branchserve {

struct ArrivalConfig {
  double rate_qpm = 2.0;
  std::size_t n_requests = 1;
  std::uint64_t seed = 0;
};

// Poisson process: i.i.d. exponential gaps with mean 60000 / rate_qpm ms,
// rounded to strictly increasing integer milliseconds.
std::vector<TimePoint> gen_arrivals(const ArrivalConfig& config);

enum class SchedulePolicy { kFcfs, kEasiestActual, kEasiestPredicted };

SchedulePolicy parse_schedule(std::string_view name);
std::string_view schedule_name(SchedulePolicy policy);

struct QueueEntry {
  std::size_t request_index = 0;
  std::size_t seq = 0;  // insertion order
  TimePoint arrival;
  std::optional<TimePoint> prefill_done;
  std::optional<DifficultyLabel> actual_difficulty;
  std::optional<DifficultyLabel> predicted_difficulty;
};

// Removes and returns the next request to serve. FCFS takes the earliest
// arrival; the easiest-first policies take the lowest level, then the earliest
// arrival, then insertion order. Entries that have not arrived by `now` (or,
// for kEasiestPredicted, are not yet prefilled and predicted) are ineligible.
// Throws std::invalid_argument("no eligible request").
QueueEntry next_request(std::vector<QueueEntry>& queue, SchedulePolicy policy, TimePoint now);

}  // namespace branchserve
