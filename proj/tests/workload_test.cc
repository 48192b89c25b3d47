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

#include "branchserve/workload.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "branchserve/orchestrator.h"
#include "test_util.h"

namespace branchserve {
namespace {

using testing::ans;
using testing::make_request;
using testing::make_template;

const char* kTwoRequests =
    R"({"v":1,"id":"q1","ground_truth":"42","difficulty":2,"prompt_tokens":100,"branches":[{"natural_length":300,"final_answer":"\\boxed{42}","oracle_convergence":120,"probes":[{"at":40,"answer":"7"},{"at":120,"answer":"42"}]}]})"
    "\n"
    R"({"id":7,"ground_truth":"x","branches":[{"natural_length":50,"final_answer":"x","pred_probs":[{"at":16,"p":0.25}]}]})"
    "\n";

std::size_t errors(const std::vector<Violation>& v) {
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [](const Violation& x) { return x.severity == Violation::Severity::kError; }));
}

TEST(ParseTrace, WellFormedFile) {
  std::istringstream in(kTwoRequests);
  const Workload w = parse_trace(in);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w.requests[0].templates[0].final_answer, ans("42"));
  EXPECT_EQ(w.requests[0].difficulty->level(), 2);
  EXPECT_EQ(w.requests[1].id, "7");
  EXPECT_FALSE(w.requests[1].difficulty.has_value());
  EXPECT_FALSE(w.has_difficulty_labels());
  EXPECT_EQ(w.requests[1].templates[0].pred_probs.size(), 1u);
}

TEST(ParseTrace, ProbePastNaturalEndNamesLineAndField) {
  std::istringstream in(
      std::string(kTwoRequests) +
      R"({"id":"q3","ground_truth":"1","branches":[{"natural_length":50,"final_answer":"1","probes":[{"at":60,"answer":"1"}]}]})"
      "\n");
  try {
    parse_trace(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("branches[0].probes[0].at"), std::string::npos) << msg;
  }
}

TEST(ParseTrace, MalformedInputs) {
  auto fails = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      parse_trace(in);
    } catch (const DataError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  EXPECT_TRUE(fails("{not json\n", "malformed JSON"));
  EXPECT_TRUE(fails(R"({"id":"a","branches":[]})", "ground_truth"));
  EXPECT_TRUE(fails(R"({"id":"a","ground_truth":"1","branches":[]})", "branches"));
  EXPECT_TRUE(fails(R"({"id":"a","ground_truth":"1","difficulty":9,"branches":[{"natural_length":5,"final_answer":"1"}]})",
                    "difficulty"));
  EXPECT_TRUE(fails(R"({"id":"a","ground_truth":"1","branches":[{"natural_length":5,"final_answer":"1"}]})"
                    "\n"
                    R"({"id":"a","ground_truth":"1","branches":[{"natural_length":5,"final_answer":"1"}]})",
                    "duplicate"));
}

TEST(AnswerAt, ProbesConvergenceAndEnd) {
  BranchTemplate t = make_template(200, "42", 120);
  t.probes = {{40, ans("7")}, {80, ans("9")}};
  EXPECT_TRUE(t.answer_at(10).is_none());
  EXPECT_EQ(t.answer_at(40), ans("7"));
  EXPECT_EQ(t.answer_at(100), ans("9"));
  EXPECT_EQ(t.answer_at(120), ans("42"));
  EXPECT_EQ(t.answer_at(500), ans("42"));
}

TEST(ValidateTrace, Cases) {
  Workload w;
  w.requests.push_back(make_request("a", "1", {make_template(100, "1"), make_template(80, "2")}));
  EXPECT_TRUE(validate_trace(w).empty());

  const auto degraded = validate_trace(w, 10);
  ASSERT_EQ(degraded.size(), 1u);
  EXPECT_EQ(degraded[0].severity, Violation::Severity::kWarning);
  EXPECT_NE(degraded[0].message.find("parallelism degraded"), std::string::npos);

  w.requests[0].ground_truth = Answer{};
  const auto bad = validate_trace(w);
  ASSERT_EQ(errors(bad), 1u);
  EXPECT_EQ(bad[0].field, "ground_truth");
}

TEST(Synthetic, DeterministicAndValid) {
  const auto params = SyntheticParams::preset("math-like");
  const Workload a = generate_synthetic(params, 200, 9);
  const Workload b = generate_synthetic(params, 200, 9);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), generate_synthetic(params, 200, 10).hash());
  EXPECT_EQ(errors(validate_trace(a, 10)), 0u);
  EXPECT_TRUE(a.has_difficulty_labels());
  EXPECT_FALSE(generate_synthetic(SyntheticParams::preset("gsm8k-like"), 5, 1).has_difficulty_labels());
  EXPECT_THROW(SyntheticParams::preset("nope"), UsageError);
}

TEST(Synthetic, ForcedCorrectness) {
  auto params = SyntheticParams::preset("math-like");
  for (auto& lv : params.levels) lv.q_correct = 1.0;
  const Workload all = generate_synthetic(params, 50, 1);
  for (const auto& r : all.requests) {
    for (const auto& t : r.templates) EXPECT_EQ(t.final_answer, r.ground_truth);
  }
  for (auto& lv : params.levels) lv.q_correct = 0.0;
  const Workload none = generate_synthetic(params, 50, 1);
  const OrchestratorConfig cfg;
  for (const auto& r : none.requests) EXPECT_NE(run_default_sc(r, cfg).final, r.ground_truth);
}

TEST(Synthetic, PerBranchCorrectnessMatchesQ) {
  const auto params = SyntheticParams::preset("math-like");
  const Workload w = generate_synthetic(params, 2500, 4);
  std::array<int, 5> hits{};
  std::array<int, 5> total{};
  for (const auto& r : w.requests) {
    const auto d = static_cast<std::size_t>(r.difficulty->level() - 1);
    for (const auto& t : r.templates) {
      hits[d] += t.final_answer == r.ground_truth ? 1 : 0;
      ++total[d];
    }
  }
  for (std::size_t d = 0; d < 5; ++d) {
    ASSERT_GE(total[d], 2000);
    EXPECT_NEAR(static_cast<double>(hits[d]) / total[d], params.levels[d].q_correct, 0.02) << "level " << d + 1;
  }
}

TEST(Synthetic, ConvergenceWithinConfiguredFraction) {
  const auto params = SyntheticParams::preset("math-like");
  const Workload w = generate_synthetic(params, 100, 5);
  for (const auto& r : w.requests) {
    for (const auto& t : r.templates) {
      ASSERT_TRUE(t.oracle_convergence.has_value());
      const double f = static_cast<double>(*t.oracle_convergence) / static_cast<double>(t.natural_length);
      EXPECT_GE(f, params.convergence_lo - 0.01);
      EXPECT_LE(f, params.convergence_hi + 0.01);
    }
  }
}

TEST(Trace, RoundTrip) {
  const Workload w = generate_synthetic(SyntheticParams::preset("math-like"), 40, 6);
  const auto path = std::filesystem::temp_directory_path() / "branchserve_roundtrip.jsonl";
  save_trace(w, path);
  const Workload back = load_trace(path);
  EXPECT_EQ(back, w);
  EXPECT_EQ(back.to_jsonl(), w.to_jsonl());

  std::istringstream in(kTwoRequests);
  const Workload parsed = parse_trace(in);
  std::istringstream again(parsed.to_jsonl());
  EXPECT_EQ(parse_trace(again), parsed);
}

}  // namespace
}  // namespace branchserve
