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

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_set>

namespace branchserve {

using ojson = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

Answer BranchTemplate::answer_at(std::int64_t position) const {
  if (position >= natural_length) return final_answer;
  if (oracle_convergence && position >= *oracle_convergence) return final_answer;
  auto it = std::upper_bound(probes.begin(), probes.end(), position,
                             [](std::int64_t pos, const ProbePoint& p) { return pos < p.at; });
  if (it == probes.begin()) return Answer{};
  return std::prev(it)->answer;
}

std::optional<double> BranchTemplate::trace_prediction_at(std::int64_t position) const {
  if (pred_probs.empty()) return std::nullopt;
  auto it = std::upper_bound(pred_probs.begin(), pred_probs.end(), position,
                             [](std::int64_t pos, const PredictionPoint& p) { return pos < p.at; });
  if (it == pred_probs.begin()) return 0.0;
  return std::prev(it)->p;
}

bool Workload::has_difficulty_labels() const {
  return std::all_of(requests.begin(), requests.end(), [](const RequestTrace& r) { return r.difficulty.has_value(); });
}

namespace {

ojson to_json(const RequestTrace& r) {
  ojson j;
  j["v"] = kSchemaVersion;
  j["id"] = r.id;
  j["ground_truth"] = r.ground_truth.text();
  j["difficulty"] = r.difficulty ? ojson(r.difficulty->level()) : ojson(nullptr);
  j["prompt_tokens"] = r.prompt_tokens;
  ojson branches = ojson::array();
  for (const auto& t : r.templates) {
    ojson b;
    b["natural_length"] = t.natural_length;
    b["final_answer"] = t.final_answer.text();
    b["oracle_convergence"] = t.oracle_convergence ? ojson(*t.oracle_convergence) : ojson(nullptr);
    ojson probes = ojson::array();
    for (const auto& p : t.probes) probes.push_back({{"at", p.at}, {"answer", p.answer.text()}});
    b["probes"] = std::move(probes);
    ojson preds = ojson::array();
    for (const auto& p : t.pred_probs) preds.push_back({{"at", p.at}, {"p", p.p}});
    b["pred_probs"] = std::move(preds);
    branches.push_back(std::move(b));
  }
  j["branches"] = std::move(branches);
  return j;
}

class FieldError : public std::runtime_error {
 public:
  FieldError(std::string field, const std::string& msg) : std::runtime_error(msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

const ojson& require(const ojson& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw FieldError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw FieldError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

std::int64_t as_int(const ojson& v, const std::string& path) {
  if (!v.is_number_integer()) throw FieldError(path, "expected an integer");
  return v.get<std::int64_t>();
}

std::string as_string(const ojson& v, const std::string& path) {
  if (!v.is_string()) throw FieldError(path, "expected a string");
  return v.get<std::string>();
}

RequestTrace from_json(const ojson& j) {
  if (!j.is_object()) throw FieldError("", "expected a JSON object per line");
  if (auto v = j.find("v"); v != j.end() && (!v->is_number_integer() || v->get<int>() != kSchemaVersion)) {
    throw FieldError("v", "unsupported schema version");
  }
  RequestTrace r;
  const ojson& id = require(j, "id", "");
  if (id.is_string()) {
    r.id = id.get<std::string>();
  } else if (id.is_number_integer()) {
    r.id = std::to_string(id.get<std::int64_t>());
  } else {
    throw FieldError("id", "expected a string or integer");
  }
  r.ground_truth = normalize_answer(as_string(require(j, "ground_truth", ""), "ground_truth"));
  if (auto d = j.find("difficulty"); d != j.end() && !d->is_null()) {
    const auto level = as_int(*d, "difficulty");
    if (level < DifficultyLabel::kMinLevel || level > DifficultyLabel::kMaxLevel) {
      throw FieldError("difficulty", "level must be in 1..5");
    }
    r.difficulty = DifficultyLabel(static_cast<int>(level));
  }
  if (auto pt = j.find("prompt_tokens"); pt != j.end()) r.prompt_tokens = as_int(*pt, "prompt_tokens");
  const ojson& branches = require(j, "branches", "");
  if (!branches.is_array()) throw FieldError("branches", "expected an array");
  for (std::size_t bi = 0; bi < branches.size(); ++bi) {
    const std::string bp = "branches[" + std::to_string(bi) + "]";
    const ojson& b = branches[bi];
    BranchTemplate t;
    t.natural_length = as_int(require(b, "natural_length", bp), bp + ".natural_length");
    t.final_answer = normalize_answer(as_string(require(b, "final_answer", bp), bp + ".final_answer"));
    if (auto oc = b.find("oracle_convergence"); oc != b.end() && !oc->is_null()) {
      t.oracle_convergence = as_int(*oc, bp + ".oracle_convergence");
    }
    if (auto probes = b.find("probes"); probes != b.end()) {
      if (!probes->is_array()) throw FieldError(bp + ".probes", "expected an array");
      for (std::size_t pi = 0; pi < probes->size(); ++pi) {
        const std::string pp = bp + ".probes[" + std::to_string(pi) + "]";
        const ojson& p = (*probes)[pi];
        t.probes.push_back({as_int(require(p, "at", pp), pp + ".at"),
                            normalize_answer(as_string(require(p, "answer", pp), pp + ".answer"))});
      }
    }
    if (auto preds = b.find("pred_probs"); preds != b.end()) {
      if (!preds->is_array()) throw FieldError(bp + ".pred_probs", "expected an array");
      for (std::size_t pi = 0; pi < preds->size(); ++pi) {
        const std::string pp = bp + ".pred_probs[" + std::to_string(pi) + "]";
        const ojson& p = (*preds)[pi];
        const ojson& pv = require(p, "p", pp);
        if (!pv.is_number()) throw FieldError(pp + ".p", "expected a number");
        t.pred_probs.push_back({as_int(require(p, "at", pp), pp + ".at"), pv.get<double>()});
      }
    }
    r.templates.push_back(std::move(t));
  }
  return r;
}

void validate_request(const RequestTrace& r, std::size_t index, std::vector<Violation>& out) {
  auto error = [&](std::string field, std::string msg) {
    out.push_back({Violation::Severity::kError, index, std::move(field), std::move(msg)});
  };
  if (r.id.empty()) error("id", "empty id");
  if (r.ground_truth.is_none()) error("ground_truth", "empty ground truth");
  if (r.prompt_tokens < 0) error("prompt_tokens", "must be non-negative");
  if (r.templates.empty()) error("branches", "at least one branch template is required");
  for (std::size_t bi = 0; bi < r.templates.size(); ++bi) {
    const auto& t = r.templates[bi];
    const std::string bp = "branches[" + std::to_string(bi) + "]";
    if (t.natural_length < 1) error(bp + ".natural_length", "must be at least 1");
    if (t.final_answer.is_none()) error(bp + ".final_answer", "empty final answer");
    if (t.oracle_convergence && (*t.oracle_convergence < 0 || *t.oracle_convergence > t.natural_length)) {
      error(bp + ".oracle_convergence", "must lie in [0, natural_length]");
    }
    std::int64_t prev = -1;
    for (std::size_t pi = 0; pi < t.probes.size(); ++pi) {
      const auto& p = t.probes[pi];
      const std::string pp = bp + ".probes[" + std::to_string(pi) + "].at";
      if (p.at <= prev) error(pp, "probe offsets must be strictly increasing");
      if (p.at < 0 || p.at > t.natural_length) {
        error(pp, "probe offset " + std::to_string(p.at) + " outside [0, natural_length=" +
                      std::to_string(t.natural_length) + "]");
      }
      if (t.oracle_convergence && p.at >= *t.oracle_convergence && p.answer != t.final_answer) {
        error(bp + ".probes[" + std::to_string(pi) + "].answer", "probe after oracle_convergence differs from final_answer");
      }
      prev = p.at;
    }
    prev = -1;
    for (std::size_t pi = 0; pi < t.pred_probs.size(); ++pi) {
      const auto& p = t.pred_probs[pi];
      const std::string pp = bp + ".pred_probs[" + std::to_string(pi) + "]";
      if (p.at <= prev) error(pp + ".at", "prediction offsets must be strictly increasing");
      if (!(p.p >= 0.0 && p.p <= 1.0)) error(pp + ".p", "probability outside [0, 1]");
      prev = p.at;
    }
  }
}

}  // namespace

std::string Workload::to_jsonl() const {
  std::string out;
  for (const auto& r : requests) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::uint64_t Workload::hash() const { return fnv1a64(to_jsonl()); }

std::vector<Violation> validate_trace(const Workload& workload, std::optional<int> parallelism) {
  std::vector<Violation> out;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < workload.requests.size(); ++i) {
    const auto& r = workload.requests[i];
    validate_request(r, i, out);
    if (!ids.insert(r.id).second) {
      out.push_back({Violation::Severity::kError, i, "id", "duplicate id '" + r.id + "'"});
    }
    if (parallelism && static_cast<int>(r.templates.size()) < *parallelism) {
      out.push_back({Violation::Severity::kWarning, i, "branches",
                     "parallelism degraded: " + std::to_string(r.templates.size()) + " templates for " +
                         std::to_string(*parallelism) + " branches"});
    }
  }
  return out;
}

Workload parse_trace(std::istream& in) {
  Workload w;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "trace line " + std::to_string(lineno);
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    RequestTrace r;
    try {
      r = from_json(j);
    } catch (const FieldError& e) {
      throw DataError(where + ": field '" + e.field() + "': " + e.what());
    }
    std::vector<Violation> violations;
    validate_request(r, w.requests.size(), violations);
    if (!violations.empty()) {
      throw DataError(where + ": field '" + violations.front().field + "': " + violations.front().message);
    }
    if (!ids.insert(r.id).second) throw DataError(where + ": field 'id': duplicate id '" + r.id + "'");
    w.requests.push_back(std::move(r));
  }
  return w;
}

Workload load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace " + path.string());
  return parse_trace(in);
}

void save_trace(const Workload& workload, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trace " + path.string());
  out << workload.to_jsonl();
}

// ---- synthetic generation ----

void SyntheticParams::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("synthetic params: " + msg); };
  double mix = 0.0;
  for (std::size_t d = 0; d < levels.size(); ++d) {
    const auto& lv = levels[d];
    if (!(lv.mean_length >= 1.0)) fail("mean_length must be >= 1");
    if (!(lv.sigma >= 0.0)) fail("sigma must be >= 0");
    if (!(lv.q_correct >= 0.0 && lv.q_correct <= 1.0)) fail("q_correct must be in [0, 1]");
    if (!(level_mix[d] >= 0.0)) fail("level mix must be non-negative");
    mix += level_mix[d];
  }
  if (!(mix > 0.0)) fail("level mix must have positive mass");
  if (!(convergence_lo > 0.0 && convergence_lo <= convergence_hi && convergence_hi <= 1.0)) {
    fail("convergence range must satisfy 0 < lo <= hi <= 1");
  }
  if (templates_per_request < 1) fail("templates_per_request must be >= 1");
  if (distractors < 1) fail("distractors must be >= 1");
  if (!(lucky_guess >= 0.0 && lucky_guess <= 1.0)) fail("lucky_guess must be in [0, 1]");
  if (probe_interval < 1) fail("probe_interval must be >= 1");
  if (min_length < 1 || min_length > token_cap) fail("need 1 <= min_length <= token_cap");
  if (prompt_tokens_lo < 0 || prompt_tokens_lo > prompt_tokens_hi) fail("bad prompt token range");
}

SyntheticParams SyntheticParams::preset(const std::string& name) {
  SyntheticParams p;
  if (name == "math-like") {
    // Mean lengths are fitted so Default SC service per level tracks
    // 13.8/18.4/25.8/33.6/47.4 s under the default timing model.
    p.levels = {{{450.0, 0.3, 0.90}, {593.0, 0.3, 0.80}, {850.0, 0.3, 0.70}, {1112.0, 0.3, 0.60}, {1609.0, 0.3, 0.45}}};
  } else if (name == "gsm8k-like") {
    p.levels = {{{350.0, 0.35, 0.92}, {420.0, 0.35, 0.88}, {500.0, 0.35, 0.84}, {580.0, 0.35, 0.80}, {660.0, 0.35, 0.75}}};
    p.emit_difficulty = false;
  } else if (name == "mmlu-like") {
    p.levels = {{{500.0, 0.4, 0.85}, {650.0, 0.4, 0.75}, {800.0, 0.4, 0.65}, {950.0, 0.4, 0.55}, {1100.0, 0.4, 0.45}}};
    p.emit_difficulty = false;
  } else {
    throw UsageError("unknown workload preset '" + name + "' (expected math-like, gsm8k-like or mmlu-like)");
  }
  return p;
}

Workload generate_synthetic(const SyntheticParams& params, std::size_t n_requests, std::uint64_t seed) {
  params.validate();
  Rng rng(seed);
  std::discrete_distribution<int> level_dist(params.level_mix.begin(), params.level_mix.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> conv_frac(params.convergence_lo, params.convergence_hi);
  std::uniform_int_distribution<std::int64_t> prompt_dist(params.prompt_tokens_lo, params.prompt_tokens_hi);
  std::uniform_int_distribution<int> value_dist(0, 9999);

  Workload w;
  w.requests.reserve(n_requests);
  for (std::size_t i = 0; i < n_requests; ++i) {
    RequestTrace r;
    r.id = "r" + std::to_string(i);
    const int level = level_dist(rng) + 1;
    const LevelParams& lv = params.levels[static_cast<std::size_t>(level - 1)];
    if (params.emit_difficulty) r.difficulty = DifficultyLabel(level);
    r.prompt_tokens = prompt_dist(rng);

    // Ground truth plus a pool of distinct wrong answers shared by the request's branches.
    std::set<int> used;
    const int truth = value_dist(rng);
    used.insert(truth);
    r.ground_truth = Answer::from_normalized(std::to_string(truth));
    std::vector<Answer> wrong;
    while (static_cast<int>(wrong.size()) < params.distractors) {
      const int v = value_dist(rng);
      if (used.insert(v).second) wrong.push_back(Answer::from_normalized(std::to_string(v)));
    }
    std::uniform_int_distribution<std::size_t> pick_wrong(0, wrong.size() - 1);

    const double mu = std::log(lv.mean_length) - 0.5 * lv.sigma * lv.sigma;
    std::lognormal_distribution<double> length_dist(mu, lv.sigma);
    for (int k = 0; k < params.templates_per_request; ++k) {
      BranchTemplate t;
      t.natural_length = std::clamp<std::int64_t>(std::llround(length_dist(rng)), params.min_length, params.token_cap);
      const bool correct = unit(rng) < lv.q_correct;
      t.final_answer = correct ? r.ground_truth : wrong[pick_wrong(rng)];
      t.oracle_convergence = std::clamp<std::int64_t>(
          std::llround(conv_frac(rng) * static_cast<double>(t.natural_length)), 1, t.natural_length);
      // Before convergence, probes wander between wrong answers with occasional lucky hits.
      for (std::int64_t at = params.probe_interval; at < t.natural_length; at += params.probe_interval) {
        Answer a;
        if (at >= *t.oracle_convergence) {
          a = t.final_answer;
        } else if (unit(rng) < params.lucky_guess) {
          a = r.ground_truth;
        } else {
          a = wrong[pick_wrong(rng)];
        }
        t.probes.push_back({at, std::move(a)});
      }
      r.templates.push_back(std::move(t));
    }
    w.requests.push_back(std::move(r));
  }
  return w;
}

}  // namespace branchserve
