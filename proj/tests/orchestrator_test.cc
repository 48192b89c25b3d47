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

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <limits>

#include "test_util.h"

namespace branchserve {
namespace {

using testing::ans;
using testing::make_request;
using testing::make_template;

constexpr double kNever = std::numeric_limits<double>::infinity();

BranchTemplate with_probes(std::int64_t length, const std::string& final_answer,
                           std::vector<std::pair<std::int64_t, std::string>> probes) {
  BranchTemplate t = make_template(length, final_answer);
  for (auto& [at, a] : probes) t.probes.push_back({at, ans(a)});
  return t;
}

TEST(EarlyTermination, Examples) {
  EXPECT_TRUE(check_early_termination(std::vector<double>{0.9, 0.92}, 0.85, 2));
  EXPECT_FALSE(check_early_termination(std::vector<double>{0.9, 0.7, 0.9}, 0.85, 2));
  EXPECT_FALSE(check_early_termination(std::vector<double>{0.9}, 0.85, 2));
  EXPECT_FALSE(check_early_termination(std::vector<double>{0.85}, 0.85, 1));
}

TEST(BranchOut, Examples) {
  auto d = branch_out_distribution(std::vector<double>{0.8, 0.2}, 1.0);
  EXPECT_NEAR(d[0], 0.8, 1e-12);
  EXPECT_NEAR(d[1], 0.2, 1e-12);
  d = branch_out_distribution(std::vector<double>{0.8, 0.2}, 0.5);
  EXPECT_NEAR(d[0], 0.9412, 1e-4);
  EXPECT_NEAR(d[1], 0.0588, 1e-4);
  for (double lambda : {0.1, 0.5, 1.0, 3.0}) {
    d = branch_out_distribution(std::vector<double>{0.5, 0.5}, lambda);
    EXPECT_DOUBLE_EQ(d[0], 0.5);
    EXPECT_DOUBLE_EQ(d[1], 0.5);
  }
  EXPECT_THROW(branch_out_distribution(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST(BranchOut, ZeroAndTinyProbabilitiesStayFinite) {
  const auto d = branch_out_distribution(std::vector<double>{0.0, 0.0, 1e-9}, 0.01);
  double sum = 0.0;
  for (double v : d) {
    EXPECT_TRUE(std::isfinite(v));
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(BranchOut, SamplingLawChiSquare) {
  const std::vector<std::pair<std::vector<double>, double>> cases{
      {{0.8, 0.2}, 1.0}, {{0.8, 0.2}, 0.5}, {{0.1, 0.3, 0.6}, 0.8}};
  Rng rng(2026);
  for (const auto& [p, lambda] : cases) {
    const auto expect = branch_out_distribution(p, lambda);
    std::vector<int> counts(p.size(), 0);
    const int n = 100000;
    for (int k = 0; k < n; ++k) ++counts[branch_out_sample(p, lambda, rng)];
    double stat = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double e = expect[j] * n;
      stat += (counts[j] - e) * (counts[j] - e) / e;
    }
    const boost::math::chi_squared dist(static_cast<double>(p.size() - 1));
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, stat)), 0.01) << "lambda=" << lambda;
  }
}

TEST(RequestTermination, Examples) {
  VoteTally six;
  six.add(ans("a"), 6);
  EXPECT_EQ(check_request_termination(six, 0.6, 0.8, 10), TerminationReason::kConsensus);
  VoteTally four_four;
  four_four.add(ans("a"), 4);
  four_four.add(ans("b"), 4);
  EXPECT_EQ(check_request_termination(four_four, 0.6, 0.8, 10), TerminationReason::kCoverage);
  VoteTally five_two;
  five_two.add(ans("a"), 5);
  five_two.add(ans("b"), 2);
  EXPECT_EQ(check_request_termination(five_two, 0.6, 0.8, 10), TerminationReason::kNone);
  EXPECT_EQ(check_request_termination(VoteTally{}, 0.6, 0.8, 10), TerminationReason::kNone);
}

TEST(RequestTermination, MonotoneUnderSupersets) {
  Rng rng(3);
  std::uniform_int_distribution<int> pick(0, 3);
  for (int trial = 0; trial < 500; ++trial) {
    VoteTally t;
    bool fired = false;
    for (int k = 0; k < 12; ++k) {
      t.add(ans(std::string(1, static_cast<char>('a' + pick(rng)))));
      const bool now = check_request_termination(t, 0.6, 0.8, 10) != TerminationReason::kNone;
      EXPECT_TRUE(now || !fired);
      fired = fired || now;
    }
  }
}

TEST(StepRequest, ContinuationBelowTau) {
  OrchestratorConfig cfg;
  cfg.c = 2;
  cfg.tau = 0.9;
  const auto r = make_request("r", "42", {make_template(1000, "42", 900), make_template(1000, "42", 900)});
  RequestJob job(r, cfg.c);
  const BranchPredictor oracle(SyntheticPredictorConfig{1.0});
  Rng rng(1);
  const RoundReport rep = step_request(job, cfg, oracle, rng);
  ASSERT_EQ(rep.actions.size(), 2u);
  for (const auto& a : rep.actions) EXPECT_EQ(a.kind, BranchAction::Kind::kContinue);
  for (const auto& b : job.branches()) EXPECT_EQ(b.tokens_decoded, cfg.interval);
  EXPECT_EQ(job.tokens_decode(), 2 * cfg.interval);
  EXPECT_FALSE(job.done());
}

TEST(StepRequest, SingleBranchConsensus) {
  OrchestratorConfig cfg;
  cfg.c = 1;
  cfg.streak = 1;
  cfg.tau = 0.9;
  cfg.short_m = 1;
  BranchTemplate t = make_template(1000, "42", 50);
  t.pred_probs = {{cfg.interval, 0.99}};
  const auto r = make_request("r", "42", {t});
  const BranchPredictor predictor;
  Rng rng(1);
  const auto out = run_duchess(r, cfg, predictor, rng);
  EXPECT_EQ(out.reason, TerminationReason::kConsensus);
  EXPECT_EQ(out.rounds, 1);
  EXPECT_EQ(out.tokens_decode, cfg.interval);
  EXPECT_EQ(out.tokens_probe, cfg.probe_cost_tokens);
  EXPECT_EQ(out.final, ans("42"));
  EXPECT_EQ(out.branches[0].status, BranchStatus::kEarlyTerminated);
}

TEST(StepRequest, ReducesToDefaultScWhenTerminationDisabled) {
  auto params = SyntheticParams::preset("math-like");
  params.templates_per_request = 10;
  const Workload w = generate_synthetic(params, 60, 12);
  OrchestratorConfig cfg;
  cfg.tau = kNever;
  cfg.alpha = 1.0;
  cfg.beta = 1.0;
  const BranchPredictor predictor(SyntheticPredictorConfig{0.5});
  for (std::size_t i = 0; i < w.size(); ++i) {
    Rng rng = derive_rng(5, i, 1);
    const auto d = run_duchess(w.requests[i], cfg, predictor, rng);
    const auto s = run_default_sc(w.requests[i], cfg);
    EXPECT_EQ(d.tokens_total, s.tokens_total);
    EXPECT_EQ(d.answers, s.answers);
    EXPECT_EQ(d.final, s.final);
  }
}

TEST(DefaultSc, SumOfLengths) {
  OrchestratorConfig cfg;
  cfg.c = 3;
  cfg.short_m = 1;
  const auto r = make_request("r", "a", {make_template(100, "a"), make_template(200, "b"), make_template(300, "a")});
  const auto out = run_default_sc(r, cfg);
  EXPECT_EQ(out.tokens_total, 600);
  EXPECT_EQ(out.answers.total(), 3);
  EXPECT_EQ(out.final, ans("a"));
  EXPECT_EQ(out.reason, TerminationReason::kCoverage);
}

TEST(DefaultSc, AgreementAndRecount) {
  OrchestratorConfig cfg;
  const auto agree = make_request("r", "z", {make_template(90, "z"), make_template(70, "z"), make_template(30, "z")});
  cfg.c = 3;
  cfg.short_m = 1;
  EXPECT_EQ(run_default_sc(agree, cfg).final, ans("z"));
  EXPECT_EQ(run_default_sc(agree, cfg).reason, TerminationReason::kConsensus);

  cfg = OrchestratorConfig{};
  const Workload w = generate_synthetic(SyntheticParams::preset("math-like"), 100, 3);
  for (const auto& r : w.requests) {
    std::map<Answer, int> counts;
    for (int k = 0; k < cfg.c; ++k) {
      const auto& t = r.templates[static_cast<std::size_t>(k)];
      ++counts[t.natural_length > cfg.token_cap ? t.answer_at(cfg.token_cap) : t.final_answer];
    }
    Answer best;
    int best_n = 0;
    for (const auto& [a, n] : counts) {
      if (n > best_n) {
        best = a;
        best_n = n;
      }
    }
    EXPECT_EQ(run_default_sc(r, cfg).final, best);
  }
}

TEST(ShortMk, FirstFinisher) {
  OrchestratorConfig cfg;
  cfg.c = 3;
  cfg.short_m = 1;
  const auto r = make_request("r", "a", {make_template(150, "c"), make_template(50, "a"), make_template(100, "b")});
  const auto out = run_short_mk(r, cfg);
  EXPECT_EQ(out.answers.total(), 1);
  EXPECT_EQ(out.final, ans("a"));
  EXPECT_EQ(out.tokens_decode, 150);
}

TEST(ShortMk, ExactlyMAnswersAndDegeneracy) {
  const Workload w = generate_synthetic(SyntheticParams::preset("math-like"), 80, 8);
  OrchestratorConfig cfg;
  for (const auto& r : w.requests) {
    cfg.short_m = 5;
    EXPECT_EQ(run_short_mk(r, cfg).answers.total(), 5);
    cfg.short_m = cfg.c;
    const auto a = run_short_mk(r, cfg);
    const auto b = run_default_sc(r, cfg);
    EXPECT_EQ(a.answers, b.answers);
    EXPECT_EQ(a.final, b.final);
    EXPECT_EQ(a.tokens_total, b.tokens_total);
    EXPECT_EQ(a.round_log, b.round_log);
  }
}

TEST(Dynasor, ConsistentProbesTerminate) {
  OrchestratorConfig cfg;
  cfg.c = 1;
  cfg.short_m = 1;
  cfg.dynasor_d = 3;
  const auto i = cfg.interval;
  const auto agree = make_request("r", "a", {with_probes(1000, "b", {{i, "a"}, {2 * i, "a"}, {3 * i, "a"}})});
  const auto out = run_dynasor(agree, cfg);
  EXPECT_EQ(out.rounds, 3);
  EXPECT_EQ(out.final, ans("a"));
  EXPECT_EQ(out.tokens_probe, 3 * cfg.probe_cost_tokens);

  const auto mixed = make_request("r", "a", {with_probes(1000, "b", {{i, "a"}, {2 * i, "b"}, {3 * i, "a"}})});
  RequestJob job(mixed, cfg.c);
  for (int k = 0; k < 3; ++k) step_dynasor(job, cfg);
  EXPECT_FALSE(job.done());
}

TEST(Dynasor, EveryBranchStopsAtSecondProbe) {
  OrchestratorConfig cfg;
  cfg.c = 3;
  cfg.short_m = 1;
  cfg.dynasor_d = 2;
  const auto i = cfg.interval;
  auto t = with_probes(1000, "c", {{i, "b"}, {2 * i, "b"}});
  const auto out = run_dynasor(make_request("r", "b", {t, t, t}), cfg);
  EXPECT_EQ(out.rounds, 2);
  EXPECT_EQ(out.answers.count(ans("b")), 3);
  for (const auto& b : out.branches) EXPECT_EQ(b.tokens_decoded, 2 * i);
}

struct Invariants : ::testing::TestWithParam<double> {};

TEST_P(Invariants, HoldEveryRound) {
  const double rho = GetParam();
  const Workload w = generate_synthetic(SyntheticParams::preset("math-like"), 60, 21);
  OrchestratorConfig cfg;
  cfg.tau = 0.7;
  const BranchPredictor predictor(SyntheticPredictorConfig{rho});
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& r = w.requests[i];
    RequestJob job(r, cfg.c);
    Rng rng = derive_rng(1, i, 1);
    std::vector<BranchState> before;
    while (!job.done()) {
      before = job.branches();
      step_request(job, cfg, predictor, rng);
      ASSERT_LE(job.active_count(), cfg.c);
      if (!job.done() && job.templates_used() < r.templates.size()) {
        EXPECT_EQ(job.active_count(), cfg.c);
      }
      for (std::size_t k = 0; k < before.size(); ++k) {
        if (!before[k].active()) {
          EXPECT_EQ(job.branches()[k].tokens_decoded, before[k].tokens_decoded);
        }
      }
      for (std::size_t k = before.size(); k < job.branches().size(); ++k) {
        const auto& child = job.branches()[k];
        ASSERT_TRUE(child.parent.has_value());
        EXPECT_TRUE(child.prediction_history.empty());
        EXPECT_EQ(child.streak, 0);
        EXPECT_EQ(child.tokens_decoded, 0);
        EXPECT_EQ(child.last_prediction, job.branches()[static_cast<std::size_t>(*child.parent)].last_prediction);
      }
    }
    std::int64_t decoded = 0;
    for (const auto& b : job.branches()) {
      decoded += b.tokens_decoded;
      EXPECT_FALSE(b.active());
      if (b.status == BranchStatus::kEarlyTerminated) {
        EXPECT_TRUE(check_early_termination(b, cfg.tau, cfg.streak));
      }
      if (b.parent) {
        const auto& parent = job.branches()[static_cast<std::size_t>(*b.parent)];
        EXPECT_LE(b.offset_base, parent.position());
        EXPECT_LE(b.offset_base, r.templates[b.template_index].natural_length);
      }
    }
    // Forked prefixes are reused, so only newly decoded tokens are charged.
    EXPECT_EQ(decoded, job.tokens_decode());
  }
}

INSTANTIATE_TEST_SUITE_P(Rho, Invariants, ::testing::Values(0.0, 0.5, 0.9, 1.0));

TEST(Duchess, PerfectOracleProbesAreCorrect) {
  const Workload w = generate_synthetic(SyntheticParams::preset("math-like"), 200, 31);
  OrchestratorConfig cfg;
  cfg.streak = 1;
  cfg.tau = 0.5;
  const BranchPredictor oracle(SyntheticPredictorConfig{1.0});
  int duchess_correct = 0;
  int sc_correct = 0;
  std::int64_t duchess_tokens = 0;
  std::int64_t sc_tokens = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& r = w.requests[i];
    Rng rng = derive_rng(2, i, 1);
    const auto d = run_duchess(r, cfg, oracle, rng);
    const auto s = run_default_sc(r, cfg);
    for (const auto& b : d.branches) {
      if (b.status == BranchStatus::kEarlyTerminated) {
        EXPECT_EQ(*b.final_answer, r.ground_truth);
      }
    }
    duchess_correct += d.final == r.ground_truth;
    sc_correct += s.final == r.ground_truth;
    duchess_tokens += d.tokens_total;
    sc_tokens += s.tokens_total;
  }
  EXPECT_GE(duchess_correct, sc_correct);
  EXPECT_LT(duchess_tokens, sc_tokens);
}

TEST(Duchess, DeterministicReplay) {
  const Workload w = generate_synthetic(SyntheticParams::preset("math-like"), 20, 41);
  const OrchestratorConfig cfg;
  const BranchPredictor predictor(SyntheticPredictorConfig{0.7});
  for (std::size_t i = 0; i < w.size(); ++i) {
    Rng a = derive_rng(3, i, 1);
    Rng b = derive_rng(3, i, 1);
    const auto x = run_duchess(w.requests[i], cfg, predictor, a);
    const auto y = run_duchess(w.requests[i], cfg, predictor, b);
    EXPECT_EQ(x.answers, y.answers);
    EXPECT_EQ(x.round_log, y.round_log);
    EXPECT_EQ(x.tokens_total, y.tokens_total);
  }
}

TEST(Duchess, DegradedParallelismWarns) {
  const auto r = make_request("r", "a", {make_template(100, "a"), make_template(120, "a")});
  const OrchestratorConfig cfg;
  Rng rng(1);
  const auto out = run_duchess(r, cfg, BranchPredictor{}, rng);
  ASSERT_FALSE(out.warnings.empty());
  EXPECT_NE(out.warnings[0].find("parallelism degraded"), std::string::npos);
}

TEST(Config, ValidationAndPresets) {
  OrchestratorConfig cfg;
  cfg.alpha = 0.9;
  cfg.beta = 0.8;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = OrchestratorConfig{};
  cfg.lambda = 0.0;
  EXPECT_THROW(cfg.validate(), UsageError);
  const auto gsm = orchestrator_preset("gsm8k-like");
  EXPECT_EQ(gsm.config.interval, 16);
  EXPECT_DOUBLE_EQ(gsm.tau_pct, 70.0);
  const auto mmlu = orchestrator_preset("mmlu-like");
  EXPECT_DOUBLE_EQ(mmlu.config.alpha, 0.4);
  EXPECT_DOUBLE_EQ(mmlu.config.beta, 1.0);
  EXPECT_THROW(orchestrator_preset("nope"), UsageError);
  EXPECT_EQ(parse_policy("short-mk"), Policy::kShortMk);
  EXPECT_THROW(parse_policy("nope"), UsageError);
}

}  // namespace
}  // namespace branchserve
