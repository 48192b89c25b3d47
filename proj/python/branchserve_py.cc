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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "branchserve/cli.h"
#include "branchserve/mlp.h"
#include "branchserve/simengine.h"

namespace py = pybind11;

namespace branchserve {
namespace {

py::object to_python(const nlohmann::ordered_json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

VoteTally to_tally(const std::map<std::string, int>& counts) {
  VoteTally t;
  for (const auto& [a, n] : counts) t.add(normalize_answer(a), n);
  return t;
}

py::dict log_row(const RequestLogEntry& e) {
  py::dict d;
  d["request_id"] = e.request_id;
  d["arrival_ms"] = e.arrival.ms();
  d["service_start_ms"] = e.service_start.ms();
  d["first_token_ms"] = e.first_token.ms();
  d["completion_ms"] = e.completion.ms();
  d["latency_ms"] = e.latency().ms();
  d["ttft_ms"] = e.ttft().ms();
  d["tokens_decode"] = e.tokens_decode;
  d["tokens_probe"] = e.tokens_probe;
  d["final_answer"] = e.final_answer.text();
  d["correct"] = e.correct;
  d["termination_reason"] = std::string(termination_reason_name(e.reason));
  std::map<std::string, int> tally;
  for (const auto& [a, n] : e.tally.counts()) tally[a.text()] = n;
  d["tally"] = tally;
  d["difficulty_actual"] = e.difficulty_actual ? py::object(py::int_(e.difficulty_actual->level())) : py::none();
  d["difficulty_predicted"] =
      e.difficulty_predicted ? py::object(py::int_(e.difficulty_predicted->level())) : py::none();
  return d;
}

py::dict simulate(const Workload& workload, const std::string& policy, const std::string& schedule, double qpm,
                  std::uint64_t seed, std::optional<std::uint64_t> arrival_seed, const std::string& preset,
                  std::optional<double> tau, double rho, std::optional<int> streak, double t_base_ms,
                  double t_scale_ms, double t_prefill_ms, std::optional<std::string> difficulty_mode) {
  SimulationSetup s;
  const OrchestratorPreset p = orchestrator_preset(preset);
  s.orchestrator = p.config;
  if (streak) s.orchestrator.streak = *streak;
  s.policy = parse_policy(policy);
  s.schedule = parse_schedule(schedule);
  s.seed = seed;
  s.timing = {t_base_ms, t_scale_ms, t_prefill_ms};
  s.predictor = BranchPredictor(SyntheticPredictorConfig{rho});
  if (tau) {
    s.orchestrator.tau = *tau;
  } else {
    const auto preds = collect_validation_predictions(workload, s.predictor, s.orchestrator.interval,
                                                      s.orchestrator.token_cap, seed ^ 0x7a17ULL);
    s.orchestrator.tau = calibrate_tau(preds, p.tau_pct);
  }
  if (difficulty_mode) {
    if (*difficulty_mode == "actual") {
      s.difficulty = DifficultyPredictor::actual();
    } else if (*difficulty_mode == "noisy-label") {
      s.difficulty = DifficultyPredictor::noisy(ConfusionMatrix::reported_default());
    } else {
      throw UsageError("difficulty_mode must be 'actual' or 'noisy-label'");
    }
  }
  const auto arrivals = gen_arrivals({qpm, workload.size(), arrival_seed.value_or(seed)});
  SimulationResult r;
  {
    py::gil_scoped_release release;
    r = run_simulation(workload, arrivals, s);
  }
  py::dict out;
  out["report"] = to_python(report_to_json(r.report));
  py::list rows;
  for (const auto& e : r.log) rows.append(log_row(e));
  out["log"] = rows;
  return out;
}

}  // namespace
}  // namespace branchserve

PYBIND11_MODULE(_core, m) {
  using namespace branchserve;
  m.doc() = "Multi-branch reasoning serving simulator";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

  m.def("normalize_answer", [](const std::string& raw) { return normalize_answer(raw).text(); }, py::arg("raw"));
  m.def(
      "majority_vote", [](const std::map<std::string, int>& counts) { return majority_vote(to_tally(counts)).text(); },
      py::arg("counts"));
  m.def(
      "percentile", [](const std::vector<std::int64_t>& values, double p) { return percentile(values, p); },
      py::arg("values"), py::arg("p"));
  m.def(
      "check_early_termination",
      [](const std::vector<double>& history, double tau, int streak) {
        return check_early_termination(history, tau, streak);
      },
      py::arg("history"), py::arg("tau"), py::arg("streak"));
  m.def(
      "branch_out_distribution",
      [](const std::vector<double>& probs, double lambda) { return branch_out_distribution(probs, lambda); },
      py::arg("probs"), py::arg("lam"));
  m.def(
      "check_request_termination",
      [](const std::map<std::string, int>& counts, double alpha, double beta, int c) {
        return std::string(termination_reason_name(check_request_termination(to_tally(counts), alpha, beta, c)));
      },
      py::arg("counts"), py::arg("alpha"), py::arg("beta"), py::arg("c"));
  m.def(
      "calibrate_tau", [](const std::vector<double>& preds, double pct) { return calibrate_tau(preds, pct); },
      py::arg("predictions"), py::arg("pct"));
  m.def(
      "gen_arrivals",
      [](double qpm, std::size_t n, std::uint64_t seed) {
        std::vector<std::int64_t> out;
        for (const auto& t : gen_arrivals({qpm, n, seed})) out.push_back(t.ms());
        return out;
      },
      py::arg("qpm"), py::arg("n"), py::arg("seed"));

  py::class_<Workload>(m, "Workload")
      .def("__len__", &Workload::size)
      .def("to_jsonl", &Workload::to_jsonl)
      .def_property_readonly("hash", [](const Workload& w) { return workload_hash_hex(w); })
      .def_property_readonly("has_difficulty_labels", &Workload::has_difficulty_labels);
  m.def(
      "generate_workload",
      [](const std::string& preset, std::size_t n, std::uint64_t seed) {
        return generate_synthetic(SyntheticParams::preset(preset), n, seed);
      },
      py::arg("preset"), py::arg("n"), py::arg("seed"));
  m.def("load_trace", &load_trace, py::arg("path"));
  m.def("save_trace", &save_trace, py::arg("workload"), py::arg("path"));

  py::class_<MlpModel>(m, "MlpModel")
      .def(py::init([](const std::filesystem::path& manifest) { return MlpModel(load_mlp(manifest)); }),
           py::arg("manifest"))
      .def_property_readonly("input_dim", [](const MlpModel& model) { return model.weights().input_dim; })
      .def(
          "forward", [](const MlpModel& model, const std::vector<float>& a) { return model.forward(a).probs; },
          py::arg("activation"));

  m.def("simulate", &simulate, py::arg("workload"), py::kw_only(), py::arg("policy") = "duchess",
        py::arg("schedule") = "fcfs", py::arg("qpm") = 2.0, py::arg("seed") = 0, py::arg("arrival_seed") = py::none(),
        py::arg("preset") = "math-like", py::arg("tau") = py::none(), py::arg("rho") = 0.8,
        py::arg("streak") = py::none(), py::arg("t_base_ms") = 20.0, py::arg("t_scale_ms") = 0.0,
        py::arg("t_prefill_ms") = 0.1, py::arg("difficulty_mode") = py::none());

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
