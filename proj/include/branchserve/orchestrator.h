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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "branchserve/core.h"
#include "branchserve/predictor.h"
#include "branchserve/workload.h"

namespace branchserve {

struct OrchestratorConfig {
  int c = 10;                // max parallel branches
  std::int64_t interval = 80;  // tokens per branch between predictions
  double tau = 0.5;          // early-termination threshold (strict >)
  int streak = 2;            // consecutive rounds above tau
  double lambda = 0.8;       // branch-out temperature
  double alpha = 0.6;        // consensus fraction
  double beta = 0.8;         // coverage fraction
  std::int64_t token_cap = 4096;
  std::int64_t probe_cost_tokens = 10;
  int dynasor_d = 3;
  int short_m = 5;

  // Throws UsageError. alpha == beta is accepted (needed for the
  // termination-disabled reduction to Default SC).
  void validate() const;
};

// Per-dataset knobs. tau is given as a percentile of validation predictions.
struct OrchestratorPreset {
  OrchestratorConfig config;
  double tau_pct = 80.0;
};

// "gsm8k-like", "mmlu-like" or "math-like".
OrchestratorPreset orchestrator_preset(std::string_view name);

enum class Policy { kDuchess, kDefaultSc, kShortMk, kDynasor };

Policy parse_policy(std::string_view name);
std::string_view policy_name(Policy policy);

enum class BranchStatus { kActive, kEarlyTerminated, kNaturalEnd, kCapped, kCancelled };

std::string_view branch_status_name(BranchStatus status);

struct BranchState {
  int id = 0;
  std::size_t template_index = 0;
  std::int64_t offset_base = 0;     // prefix inherited from the parent at fork
  std::int64_t tokens_decoded = 0;  // decoded by this branch since it started
  std::vector<double> prediction_history;
  double last_prediction = 0.0;  // sampling weight; a fork starts with its parent's
  int streak = 0;
  std::vector<Answer> probe_history;  // intermediate answers (Dynasor)
  BranchStatus status = BranchStatus::kActive;
  std::optional<Answer> final_answer;
  std::optional<int> parent;

  std::int64_t position() const { return offset_base + tokens_decoded; }
  bool active() const { return status == BranchStatus::kActive; }
};

enum class TerminationReason { kNone, kConsensus, kCoverage, kExhausted };

std::string_view termination_reason_name(TerminationReason reason);

struct BranchAction {
  enum class Kind { kContinue, kTerminate, kFinish, kBranchOut };
  Kind kind = Kind::kContinue;
  int branch_id = 0;
  int source_branch_id = -1;  // parent, for kBranchOut

  friend bool operator==(const BranchAction&, const BranchAction&) = default;
};

// What one round cost, for the timing model.
struct RoundReport {
  int decoding_branches = 0;        // branches that decoded this round
  std::int64_t max_decode_tokens = 0;  // wall-clock length of the decode step
  std::int64_t decode_tokens = 0;      // summed over branches
  int probes = 0;
  std::vector<BranchAction> actions;

  friend bool operator==(const RoundReport&, const RoundReport&) = default;
};

// Mutable per-request state. Holds a reference to its trace, which must outlive it.
class RequestJob {
 public:
  RequestJob(const RequestTrace& trace, int c);

  const RequestTrace& trace() const { return *trace_; }
  const std::vector<BranchState>& branches() const { return branches_; }
  const VoteTally& tally() const { return tally_; }
  std::int64_t tokens_decode() const { return tokens_decode_; }
  std::int64_t tokens_probe() const { return tokens_probe_; }
  int rounds() const { return rounds_; }
  bool done() const { return reason_ != TerminationReason::kNone; }
  TerminationReason reason() const { return reason_; }
  int active_count() const;
  std::size_t templates_used() const { return next_template_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  friend RoundReport step_request(RequestJob&, const OrchestratorConfig&, const BranchPredictor&, Rng&);
  friend RoundReport step_default_sc(RequestJob&, const OrchestratorConfig&);
  friend RoundReport step_short_mk(RequestJob&, const OrchestratorConfig&);
  friend RoundReport step_dynasor(RequestJob&, const OrchestratorConfig&);
  friend class JobMutator;  // shared round helpers in orchestrator.cc

  const RequestTrace* trace_;
  std::vector<BranchState> branches_;
  std::size_t next_template_ = 0;
  VoteTally tally_;
  std::int64_t tokens_decode_ = 0;
  std::int64_t tokens_probe_ = 0;
  int rounds_ = 0;
  TerminationReason reason_ = TerminationReason::kNone;
  std::vector<std::string> warnings_;
};

struct RequestOutcome {
  VoteTally answers;
  Answer final;
  TerminationReason reason = TerminationReason::kNone;
  std::int64_t tokens_decode = 0;
  std::int64_t tokens_probe = 0;
  std::int64_t tokens_total = 0;
  int rounds = 0;
  std::vector<RoundReport> round_log;
  std::vector<BranchState> branches;
  std::vector<std::string> warnings;
};

// True iff the last `streak` predictions are all strictly above tau.
bool check_early_termination(std::span<const double> history, double tau, int streak);
bool check_early_termination(const BranchState& branch, double tau, int streak);

// Rescaled distribution p_j^(1/lambda) / sum_k p_k^(1/lambda), with each p
// clamped to [1e-6, 1] first. Throws std::invalid_argument("no branch to duplicate") when empty.
std::vector<double> branch_out_distribution(std::span<const double> probs, double lambda);
std::size_t branch_out_sample(std::span<const double> probs, double lambda, Rng& rng);

// Consensus if some answer has >= ceil(alpha*c) votes, else coverage if the
// total is >= ceil(beta*c), else kNone.
TerminationReason check_request_termination(const VoteTally& tally, double alpha, double beta, int c);

// One round of the prediction-guided policy: decode, predict, terminate,
// request-termination check, then branch-out refill.
RoundReport step_request(RequestJob& job, const OrchestratorConfig& config, const BranchPredictor& predictor, Rng& rng);

// Baseline rounds. Each decodes `interval` tokens per active branch.
RoundReport step_default_sc(RequestJob& job, const OrchestratorConfig& config);
RoundReport step_short_mk(RequestJob& job, const OrchestratorConfig& config);
RoundReport step_dynasor(RequestJob& job, const OrchestratorConfig& config);

RequestOutcome run_duchess(const RequestTrace& trace, const OrchestratorConfig& config,
                           const BranchPredictor& predictor, Rng& rng);
RequestOutcome run_default_sc(const RequestTrace& trace, const OrchestratorConfig& config);
RequestOutcome run_short_mk(const RequestTrace& trace, const OrchestratorConfig& config);
RequestOutcome run_dynasor(const RequestTrace& trace, const OrchestratorConfig& config);

RequestOutcome run_policy(Policy policy, const RequestTrace& trace, const OrchestratorConfig& config,
                          const BranchPredictor& predictor, Rng& rng);

}  // namespace branchserve
