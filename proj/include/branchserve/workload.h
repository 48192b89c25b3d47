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

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "branchserve/core.h"

namespace branchserve {

struct ProbePoint {
  std::int64_t at = 0;
  Answer answer;
  friend bool operator==(const ProbePoint&, const ProbePoint&) = default;
};

struct PredictionPoint {
  std::int64_t at = 0;
  double p = 0.0;
  friend bool operator==(const PredictionPoint&, const PredictionPoint&) = default;
};

// A recorded (or synthesized) branch trajectory that stands in for live decoding.
struct BranchTemplate {
  std::int64_t natural_length = 0;
  Answer final_answer;
  std::vector<ProbePoint> probes;  // strictly increasing offsets
  std::optional<std::int64_t> oracle_convergence;
  std::vector<PredictionPoint> pred_probs;  // trace-embedded correctness predictions

  // Answer a probe would extract after `position` decoded tokens:
  // the final answer at/after natural end or convergence, else the latest
  // recorded probe at or before `position`, else no-answer.
  Answer answer_at(std::int64_t position) const;

  // Latest embedded prediction at or before `position`; nullopt when the
  // template carries no predictions.
  std::optional<double> trace_prediction_at(std::int64_t position) const;

  friend bool operator==(const BranchTemplate&, const BranchTemplate&) = default;
};

struct RequestTrace {
  std::string id;
  Answer ground_truth;
  std::optional<DifficultyLabel> difficulty;
  std::int64_t prompt_tokens = 0;
  std::vector<BranchTemplate> templates;

  friend bool operator==(const RequestTrace&, const RequestTrace&) = default;
};

struct Workload {
  std::vector<RequestTrace> requests;

  std::size_t size() const { return requests.size(); }
  bool has_difficulty_labels() const;

  // Canonical JSONL serialization; the identity hash is taken over it.
  std::string to_jsonl() const;
  std::uint64_t hash() const;

  friend bool operator==(const Workload&, const Workload&) = default;
};

struct Violation {
  enum class Severity { kWarning, kError };
  Severity severity = Severity::kError;
  std::size_t request_index = 0;
  std::string field;
  std::string message;
};

// Re-checks every invariant. `parallelism`, when given, also reports a
// warning for requests with fewer templates than branches.
std::vector<Violation> validate_trace(const Workload& workload, std::optional<int> parallelism = std::nullopt);

Workload parse_trace(std::istream& in);
Workload load_trace(const std::filesystem::path& path);
void save_trace(const Workload& workload, const std::filesystem::path& path);

struct LevelParams {
  double mean_length = 1000.0;  // tokens
  double sigma = 0.3;           // log-space dispersion
  double q_correct = 0.7;       // probability a template converges to the ground truth
};

struct SyntheticParams {
  std::array<LevelParams, DifficultyLabel::kNumLevels> levels{};
  std::array<double, DifficultyLabel::kNumLevels> level_mix{0.2, 0.2, 0.2, 0.2, 0.2};
  double convergence_lo = 0.3;  // fraction of natural length
  double convergence_hi = 0.7;
  int templates_per_request = 16;
  int distractors = 3;
  // Chance a pre-convergence probe happens to hit the ground truth.
  double lucky_guess = 0.1;
  std::int64_t probe_interval = 16;
  std::int64_t token_cap = 4096;
  std::int64_t min_length = 32;
  std::int64_t prompt_tokens_lo = 64;
  std::int64_t prompt_tokens_hi = 512;
  bool emit_difficulty = true;

  // UsageError on out-of-range values.
  void validate() const;

  // "math-like", "gsm8k-like" or "mmlu-like".
  static SyntheticParams preset(const std::string& name);
};

Workload generate_synthetic(const SyntheticParams& params, std::size_t n_requests, std::uint64_t seed);

}  // namespace branchserve
