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

#include "branchserve/orchestrator.h"

#include <cmath>
#include <limits>

namespace branchserve {

namespace {

constexpr double kProbFloor = 1e-6;

// ceil(frac * c) with slack for products like 0.6 * 10.
int vote_threshold(double frac, int c) {
  return static_cast<int>(std::ceil(frac * static_cast<double>(c) - 1e-9));
}

}  // namespace

void OrchestratorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("orchestrator config: " + msg); };
  if (c < 1) fail("c must be >= 1");
  if (interval < 1) fail("interval must be >= 1");
  if (streak < 1) fail("S (streak) must be >= 1");
  if (!(lambda > 0.0)) fail("lambda must be > 0");
  if (!(alpha > 0.0 && alpha <= beta && beta <= 1.0)) fail("need 0 < alpha <= beta <= 1");
  if (token_cap < interval) fail("token_cap must be >= interval");
  if (probe_cost_tokens < 0) fail("probe_cost_tokens must be >= 0");
  if (dynasor_d < 2) fail("dynasor_d must be >= 2");
  if (short_m < 1) fail("short_m must be >= 1");
  if (short_m > c) fail("short_m must be <= c");
  if (std::isnan(tau)) fail("tau must be a number");
}

OrchestratorPreset orchestrator_preset(std::string_view name) {
  OrchestratorPreset p;
  auto& c = p.config;
  c.c = 10;
  c.streak = 2;
  c.token_cap = 4096;
  c.probe_cost_tokens = 10;
  if (name == "gsm8k-like") {
    c.interval = 16;
    c.lambda = 1.0;
    c.alpha = 0.6;
    c.beta = 0.8;
    p.tau_pct = 70.0;
  } else if (name == "mmlu-like") {
    c.interval = 80;
    c.lambda = 0.8;
    c.alpha = 0.4;
    c.beta = 1.0;
    p.tau_pct = 80.0;
  } else if (name == "math-like") {
    c.interval = 80;
    c.lambda = 0.8;
    c.alpha = 0.6;
    c.beta = 0.8;
    p.tau_pct = 80.0;
  } else {
    throw UsageError("unknown preset '" + std::string(name) + "' (expected gsm8k-like, mmlu-like or math-like)");
  }
  return p;
}

Policy parse_policy(std::string_view name) {
  if (name == "duchess") return Policy::kDuchess;
  if (name == "default-sc") return Policy::kDefaultSc;
  if (name == "short-mk") return Policy::kShortMk;
  if (name == "dynasor") return Policy::kDynasor;
  throw UsageError("unknown policy '" + std::string(name) + "' (expected duchess, default-sc, short-mk or dynasor)");
}

std::string_view policy_name(Policy policy) {
  switch (policy) {
    case Policy::kDuchess: return "duchess";
    case Policy::kDefaultSc: return "default-sc";
    case Policy::kShortMk: return "short-mk";
    case Policy::kDynasor: return "dynasor";
  }
  return "?";
}

std::string_view branch_status_name(BranchStatus status) {
  switch (status) {
    case BranchStatus::kActive: return "active";
    case BranchStatus::kEarlyTerminated: return "early_terminated";
    case BranchStatus::kNaturalEnd: return "natural_end";
    case BranchStatus::kCapped: return "capped";
    case BranchStatus::kCancelled: return "cancelled";
  }
  return "?";
}

std::string_view termination_reason_name(TerminationReason reason) {
  switch (reason) {
    case TerminationReason::kNone: return "none";
    case TerminationReason::kConsensus: return "consensus";
    case TerminationReason::kCoverage: return "coverage";
    case TerminationReason::kExhausted: return "exhausted";
  }
  return "?";
}

bool check_early_termination(std::span<const double> history, double tau, int streak) {
  if (streak < 1 || history.size() < static_cast<std::size_t>(streak)) return false;
  return std::all_of(history.end() - streak, history.end(), [tau](double p) { return p > tau; });
}

bool check_early_termination(const BranchState& branch, double tau, int streak) {
  return check_early_termination(branch.prediction_history, tau, streak);
}

std::vector<double> branch_out_distribution(std::span<const double> probs, double lambda) {
  if (probs.empty()) throw std::invalid_argument("no branch to duplicate");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  // Work in log space so tiny lambdas do not underflow every weight to zero.
  std::vector<double> logw(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    logw[j] = std::log(std::clamp(probs[j], kProbFloor, 1.0)) / lambda;
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  std::vector<double> out(probs.size());
  double z = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    out[j] = std::exp(logw[j] - mx);
    z += out[j];
  }
  for (double& v : out) v /= z;
  return out;
}

std::size_t branch_out_sample(std::span<const double> probs, double lambda, Rng& rng) {
  const auto dist = branch_out_distribution(probs, lambda);
  std::discrete_distribution<std::size_t> pick(dist.begin(), dist.end());
  return pick(rng);
}

TerminationReason check_request_termination(const VoteTally& tally, double alpha, double beta, int c) {
  if (!tally.empty() && tally.max_count() >= vote_threshold(alpha, c)) return TerminationReason::kConsensus;
  if (!tally.empty() && tally.total() >= vote_threshold(beta, c)) return TerminationReason::kCoverage;
  return TerminationReason::kNone;
}

// ---- per-request state machine ----

RequestJob::RequestJob(const RequestTrace& trace, int c) : trace_(&trace) {
  if (c < 1) throw UsageError("c must be >= 1");
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(c), trace.templates.size());
  for (std::size_t k = 0; k < n; ++k) {
    BranchState b;
    b.id = static_cast<int>(k);
    b.template_index = k;
    branches_.push_back(std::move(b));
  }
  next_template_ = n;
  if (n < static_cast<std::size_t>(c)) {
    warnings_.push_back("parallelism degraded: request " + trace.id + " has " + std::to_string(trace.templates.size()) +
                        " templates for " + std::to_string(c) + " branches");
  }
}

int RequestJob::active_count() const {
  return static_cast<int>(std::count_if(branches_.begin(), branches_.end(), [](const BranchState& b) { return b.active(); }));
}

class JobMutator {
 public:
  static const BranchTemplate& tmpl(const RequestJob& job, const BranchState& b) {
    return job.trace_->templates[b.template_index];
  }

  static std::int64_t limit(const RequestJob& job, const BranchState& b, const OrchestratorConfig& cfg) {
    return std::min(tmpl(job, b).natural_length, cfg.token_cap);
  }

  static void begin_round(RequestJob& job) {
    if (job.done()) throw std::logic_error("step on a finished request");
    ++job.rounds_;
  }

  // Advances every active branch by up to `budget` tokens (never past its natural end or the cap).
  static void decode(RequestJob& job, const OrchestratorConfig& cfg, std::int64_t budget, RoundReport& report) {
    for (auto& b : job.branches_) {
      if (!b.active()) continue;
      const std::int64_t d = std::clamp<std::int64_t>(limit(job, b, cfg) - b.position(), 0, budget);
      b.tokens_decoded += d;
      job.tokens_decode_ += d;
      report.decode_tokens += d;
      report.max_decode_tokens = std::max(report.max_decode_tokens, d);
      ++report.decoding_branches;
    }
  }

  static bool at_natural_end(const RequestJob& job, const BranchState& b) {
    return b.position() >= tmpl(job, b).natural_length;
  }

  static void finish_natural(RequestJob& job, BranchState& b, RoundReport& report) {
    b.status = BranchStatus::kNaturalEnd;
    b.final_answer = tmpl(job, b).final_answer;
    job.tally_.add(*b.final_answer);
    report.actions.push_back({BranchAction::Kind::kFinish, b.id, -1});
  }

  // Early termination or cap: the answer is extracted with a probe.
  static void finish_probed(RequestJob& job, const OrchestratorConfig& cfg, BranchState& b, BranchStatus status,
                            RoundReport& report) {
    b.status = status;
    b.final_answer = tmpl(job, b).answer_at(b.position());
    job.tally_.add(*b.final_answer);
    job.tokens_probe_ += cfg.probe_cost_tokens;
    ++report.probes;
    report.actions.push_back({BranchAction::Kind::kTerminate, b.id, -1});
  }

  static void cancel_active(RequestJob& job) {
    for (auto& b : job.branches_) {
      if (b.active()) b.status = BranchStatus::kCancelled;
    }
  }

  static void finish_request(RequestJob& job, TerminationReason reason) {
    cancel_active(job);
    job.reason_ = reason;
  }

  // Termination for baselines that vote over every branch they run.
  static TerminationReason baseline_reason(const RequestJob& job, int intended) {
    const auto& t = job.tally_;
    if (t.total() < intended) return TerminationReason::kExhausted;
    return t.max_count() == t.total() ? TerminationReason::kConsensus : TerminationReason::kCoverage;
  }

  static void refill(RequestJob& job, const OrchestratorConfig& cfg, Rng& rng, RoundReport& report) {
    const auto& templates = job.trace_->templates;
    while (job.active_count() < cfg.c) {
      if (job.next_template_ >= templates.size()) {
        const std::string msg = "parallelism degraded: request " + job.trace_->id + " ran out of branch templates";
        if (job.active_count() > 0 && std::find(job.warnings_.begin(), job.warnings_.end(), msg) == job.warnings_.end()) {
          job.warnings_.push_back(msg);
        }
        return;
      }
      std::vector<int> active_ids;
      std::vector<double> weights;
      for (const auto& b : job.branches_) {
        if (b.active()) {
          active_ids.push_back(b.id);
          weights.push_back(b.last_prediction);
        }
      }
      if (active_ids.empty()) return;
      const BranchState parent = job.branches_[static_cast<std::size_t>(active_ids[branch_out_sample(weights, cfg.lambda, rng)])];
      BranchState child;
      child.id = static_cast<int>(job.branches_.size());
      child.template_index = job.next_template_++;
      child.offset_base = std::min(parent.position(), templates[child.template_index].natural_length);
      child.last_prediction = parent.last_prediction;
      child.parent = parent.id;
      report.actions.push_back({BranchAction::Kind::kBranchOut, child.id, parent.id});
      job.branches_.push_back(std::move(child));
    }
  }

  static RequestOutcome outcome(const RequestJob& job, std::vector<RoundReport> log) {
    RequestOutcome o;
    o.answers = job.tally_;
    o.final = job.tally_.empty() ? Answer{} : majority_vote(job.tally_);
    o.reason = job.reason_;
    o.tokens_decode = job.tokens_decode_;
    o.tokens_probe = job.tokens_probe_;
    o.tokens_total = job.tokens_decode_ + job.tokens_probe_;
    o.rounds = job.rounds_;
    o.round_log = std::move(log);
    o.branches = job.branches_;
    o.warnings = job.warnings_;
    return o;
  }
};

RoundReport step_request(RequestJob& job, const OrchestratorConfig& cfg, const BranchPredictor& predictor, Rng& rng) {
  using M = JobMutator;
  M::begin_round(job);
  RoundReport report;
  M::decode(job, cfg, cfg.interval, report);

  for (auto& b : job.branches_) {
    if (!b.active()) continue;
    if (M::at_natural_end(job, b)) {
      M::finish_natural(job, b, report);
    } else if (b.position() >= cfg.token_cap) {
      M::finish_probed(job, cfg, b, BranchStatus::kCapped, report);
    } else {
      const double p = predictor.predict(M::tmpl(job, b), b.position(), job.trace().ground_truth, rng);
      b.prediction_history.push_back(p);
      b.last_prediction = p;
      b.streak = p > cfg.tau ? b.streak + 1 : 0;
      if (check_early_termination(b, cfg.tau, cfg.streak)) {
        M::finish_probed(job, cfg, b, BranchStatus::kEarlyTerminated, report);
      } else {
        report.actions.push_back({BranchAction::Kind::kContinue, b.id, -1});
      }
    }
  }

  // Forks created after a stop would be cancelled before decoding anything,
  // so the stop check runs first.
  if (auto reason = check_request_termination(job.tally_, cfg.alpha, cfg.beta, cfg.c); reason != TerminationReason::kNone) {
    M::finish_request(job, reason);
    return report;
  }
  M::refill(job, cfg, rng, report);
  if (job.active_count() == 0) M::finish_request(job, TerminationReason::kExhausted);
  return report;
}

RoundReport step_default_sc(RequestJob& job, const OrchestratorConfig& cfg) {
  using M = JobMutator;
  M::begin_round(job);
  RoundReport report;
  M::decode(job, cfg, cfg.interval, report);
  for (auto& b : job.branches_) {
    if (!b.active()) continue;
    if (M::at_natural_end(job, b)) {
      M::finish_natural(job, b, report);
    } else if (b.position() >= cfg.token_cap) {
      M::finish_probed(job, cfg, b, BranchStatus::kCapped, report);
    } else {
      report.actions.push_back({BranchAction::Kind::kContinue, b.id, -1});
    }
  }
  if (job.active_count() == 0) M::finish_request(job, M::baseline_reason(job, cfg.c));
  return report;
}

RoundReport step_short_mk(RequestJob& job, const OrchestratorConfig& cfg) {
  using M = JobMutator;
  if (cfg.short_m < 1 || cfg.short_m > cfg.c) throw UsageError("short-m@k requires 1 <= m <= c");
  M::begin_round(job);
  RoundReport report;

  // Branches that can finish inside this round, ordered by finishing instant.
  struct Finisher {
    std::int64_t remaining;
    int id;
  };
  std::vector<Finisher> finishing;
  for (const auto& b : job.branches_) {
    if (!b.active()) continue;
    const std::int64_t remaining = M::limit(job, b, cfg) - b.position();
    if (remaining <= cfg.interval) finishing.push_back({remaining, b.id});
  }
  std::sort(finishing.begin(), finishing.end(),
            [](const Finisher& a, const Finisher& b) { return std::tie(a.remaining, a.id) < std::tie(b.remaining, b.id); });

  const int needed = cfg.short_m - job.tally_.total();
  const bool cut_now = needed > 0 && static_cast<int>(finishing.size()) >= needed;
  std::int64_t budget = cfg.interval;
  std::vector<int> winners;
  if (cut_now) {
    budget = finishing[static_cast<std::size_t>(needed - 1)].remaining;
    for (int k = 0; k < needed; ++k) winners.push_back(finishing[static_cast<std::size_t>(k)].id);
  }
  M::decode(job, cfg, budget, report);

  for (auto& b : job.branches_) {
    if (!b.active()) continue;
    const bool reached_end = b.position() >= M::limit(job, b, cfg);
    const bool counted = !cut_now || std::find(winners.begin(), winners.end(), b.id) != winners.end();
    if (reached_end && counted) {
      if (M::at_natural_end(job, b)) {
        M::finish_natural(job, b, report);
      } else {
        M::finish_probed(job, cfg, b, BranchStatus::kCapped, report);
      }
    } else if (!cut_now) {
      report.actions.push_back({BranchAction::Kind::kContinue, b.id, -1});
    }
  }
  if (cut_now || job.active_count() == 0) {
    M::finish_request(job, M::baseline_reason(job, cfg.short_m));
  }
  return report;
}

RoundReport step_dynasor(RequestJob& job, const OrchestratorConfig& cfg) {
  using M = JobMutator;
  if (cfg.dynasor_d < 2) throw UsageError("dynasor requires D >= 2");
  M::begin_round(job);
  RoundReport report;
  M::decode(job, cfg, cfg.interval, report);
  const auto d = static_cast<std::size_t>(cfg.dynasor_d);
  for (auto& b : job.branches_) {
    if (!b.active()) continue;
    if (M::at_natural_end(job, b)) {
      M::finish_natural(job, b, report);
      continue;
    }
    if (b.position() >= cfg.token_cap) {
      M::finish_probed(job, cfg, b, BranchStatus::kCapped, report);
      continue;
    }
    // Intermediate probe every round.
    b.probe_history.push_back(M::tmpl(job, b).answer_at(b.position()));
    job.tokens_probe_ += cfg.probe_cost_tokens;
    ++report.probes;
    const auto& h = b.probe_history;
    const bool consistent = h.size() >= d && !h.back().is_none() &&
                            std::all_of(h.end() - static_cast<std::ptrdiff_t>(d), h.end(),
                                        [&](const Answer& a) { return a == h.back(); });
    if (consistent) {
      b.status = BranchStatus::kEarlyTerminated;
      b.final_answer = h.back();
      job.tally_.add(h.back());
      report.actions.push_back({BranchAction::Kind::kTerminate, b.id, -1});
    } else {
      report.actions.push_back({BranchAction::Kind::kContinue, b.id, -1});
    }
  }
  if (job.active_count() == 0) M::finish_request(job, M::baseline_reason(job, cfg.c));
  return report;
}

namespace {

template <typename Step>
RequestOutcome drive(RequestJob& job, Step&& step) {
  std::vector<RoundReport> log;
  while (!job.done()) log.push_back(step(job));
  return JobMutator::outcome(job, std::move(log));
}

}  // namespace

RequestOutcome run_duchess(const RequestTrace& trace, const OrchestratorConfig& config, const BranchPredictor& predictor,
                           Rng& rng) {
  config.validate();
  RequestJob job(trace, config.c);
  return drive(job, [&](RequestJob& j) { return step_request(j, config, predictor, rng); });
}

RequestOutcome run_default_sc(const RequestTrace& trace, const OrchestratorConfig& config) {
  config.validate();
  RequestJob job(trace, config.c);
  return drive(job, [&](RequestJob& j) { return step_default_sc(j, config); });
}

RequestOutcome run_short_mk(const RequestTrace& trace, const OrchestratorConfig& config) {
  config.validate();
  RequestJob job(trace, config.c);
  return drive(job, [&](RequestJob& j) { return step_short_mk(j, config); });
}

RequestOutcome run_dynasor(const RequestTrace& trace, const OrchestratorConfig& config) {
  config.validate();
  RequestJob job(trace, config.c);
  return drive(job, [&](RequestJob& j) { return step_dynasor(j, config); });
}

RequestOutcome run_policy(Policy policy, const RequestTrace& trace, const OrchestratorConfig& config,
                          const BranchPredictor& predictor, Rng& rng) {
  switch (policy) {
    case Policy::kDuchess: return run_duchess(trace, config, predictor, rng);
    case Policy::kDefaultSc: return run_default_sc(trace, config);
    case Policy::kShortMk: return run_short_mk(trace, config);
    case Policy::kDynasor: return run_dynasor(trace, config);
  }
  throw std::logic_error("unreachable policy");
}

}  // namespace branchserve
