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

#include "branchserve/predictor.h"

#include <fstream>
#include <sstream>

namespace branchserve {

double synthetic_predict(bool converged_correct, const SyntheticPredictorConfig& config, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  const double oracle = converged_correct ? 1.0 : 0.0;
  return std::clamp(config.rho * oracle + (1.0 - config.rho) * u, 0.0, 1.0);
}

double calibrate_tau(std::span<const double> validation_predictions, double pct) {
  if (validation_predictions.empty()) throw std::invalid_argument("calibrate_tau: no validation predictions");
  return percentile(validation_predictions, pct);
}

double BranchPredictor::predict(const BranchTemplate& tmpl, std::int64_t position, const Answer& ground_truth,
                                Rng& rng) const {
  if (auto p = tmpl.trace_prediction_at(position)) return *p;
  return synthetic_predict(tmpl.answer_at(position) == ground_truth, config_, rng);
}

std::vector<double> collect_validation_predictions(const Workload& workload, const BranchPredictor& predictor,
                                                   std::int64_t interval, std::int64_t token_cap, std::uint64_t seed) {
  if (interval < 1) throw UsageError("interval must be >= 1");
  Rng rng(seed);
  std::vector<double> out;
  for (const auto& r : workload.requests) {
    for (const auto& t : r.templates) {
      const std::int64_t end = std::min(t.natural_length, token_cap);
      for (std::int64_t pos = interval; pos < end; pos += interval) {
        out.push_back(predictor.predict(t, pos, r.ground_truth, rng));
      }
    }
  }
  return out;
}

ConfusionMatrix::ConfusionMatrix(const Rows& rows) : rows_(rows) {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    double sum = 0.0;
    for (double v : rows_[i]) {
      if (!(v >= 0.0)) throw UsageError("confusion matrix entries must be non-negative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw UsageError("confusion matrix row " + std::to_string(i + 1) + " sums to " + std::to_string(sum));
    }
  }
}

ConfusionMatrix ConfusionMatrix::identity() {
  Rows rows{};
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i][i] = 1.0;
  return ConfusionMatrix(rows);
}

ConfusionMatrix ConfusionMatrix::reported_default() {
  return ConfusionMatrix(Rows{{
      {0.40, 0.25, 0.16, 0.12, 0.07},
      {0.25, 0.38, 0.22, 0.10, 0.05},
      {0.10, 0.20, 0.40, 0.20, 0.10},
      {0.05, 0.10, 0.22, 0.42, 0.21},
      {0.03, 0.06, 0.10, 0.31, 0.50},
  }});
}

ConfusionMatrix ConfusionMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open confusion matrix " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  for (char& c : text) {
    if (c == ',') c = ' ';
  }
  std::istringstream ss(text);
  std::vector<double> values;
  double v = 0.0;
  while (ss >> v) values.push_back(v);
  if (!ss.eof()) throw DataError("confusion matrix " + path.string() + ": non-numeric entry");
  if (values.size() != 25) {
    throw DataError("confusion matrix " + path.string() + ": expected 25 values, got " + std::to_string(values.size()));
  }
  Rows rows{};
  for (std::size_t i = 0; i < 25; ++i) rows[i / 5][i % 5] = values[i];
  try {
    return ConfusionMatrix(rows);
  } catch (const UsageError& e) {
    throw DataError(std::string(e.what()));
  }
}

DifficultyLabel ConfusionMatrix::sample(DifficultyLabel actual, Rng& rng) const {
  const auto& row = rows_[static_cast<std::size_t>(actual.level() - 1)];
  std::discrete_distribution<int> dist(row.begin(), row.end());
  return DifficultyLabel(dist(rng) + 1);
}

DifficultyPredictor DifficultyPredictor::actual() { return DifficultyPredictor{}; }

DifficultyPredictor DifficultyPredictor::mlp(MlpWeights weights) {
  if (weights.head_dim != DifficultyLabel::kNumLevels) {
    throw DataError("difficulty mlp must have a head of width 5, got " + std::to_string(weights.head_dim));
  }
  DifficultyPredictor p;
  p.mode_ = DifficultyMode::kMlp;
  p.model_ = std::make_shared<const MlpModel>(std::move(weights));
  return p;
}

DifficultyPredictor DifficultyPredictor::noisy(ConfusionMatrix matrix) {
  DifficultyPredictor p;
  p.mode_ = DifficultyMode::kNoisyLabel;
  p.confusion_ = std::move(matrix);
  return p;
}

DifficultyLabel DifficultyPredictor::predict(std::optional<DifficultyLabel> label, std::span<const float> activation,
                                             Rng& rng) const {
  switch (mode_) {
    case DifficultyMode::kActual:
      if (!label) throw DataError("difficulty prediction (actual): request has no difficulty label");
      return *label;
    case DifficultyMode::kNoisyLabel:
      if (!label) throw DataError("difficulty prediction (noisy-label): request has no difficulty label");
      return confusion_->sample(*label, rng);
    case DifficultyMode::kMlp:
      if (activation.empty()) throw DataError("difficulty prediction (mlp): no activation vector for request");
      return DifficultyLabel(static_cast<int>(model_->forward(activation).argmax()) + 1);
  }
  throw std::logic_error("unreachable difficulty mode");
}

}  // namespace branchserve
