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
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "branchserve/core.h"
#include "branchserve/mlp.h"
#include "branchserve/workload.h"

namespace branchserve {

struct SyntheticPredictorConfig {
  double rho = 1.0;  // 1 = perfect oracle, 0 = uniform noise

  void validate() const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("rho must be in [0, 1]");
  }
};

// p = clamp(rho * oracle + (1 - rho) * u, 0, 1), u ~ U(0, 1).
double synthetic_predict(bool converged_correct, const SyntheticPredictorConfig& config, Rng& rng);

// Early-termination threshold: nearest-rank percentile of validation predictions.
double calibrate_tau(std::span<const double> validation_predictions, double pct);

// Per-branch correctness predictions for the orchestrator. Templates that
// embed predictions are read from the trace; others use the synthetic oracle,
// where "correct" means a probe at the current offset returns the ground truth.
class BranchPredictor {
 public:
  BranchPredictor() = default;
  explicit BranchPredictor(SyntheticPredictorConfig config) : config_(config) { config_.validate(); }

  const SyntheticPredictorConfig& config() const { return config_; }
  double predict(const BranchTemplate& tmpl, std::int64_t position, const Answer& ground_truth, Rng& rng) const;

 private:
  SyntheticPredictorConfig config_;
};

// Predictions a probe would have produced every `interval` tokens along every
// template, for calibrating tau on a held-out workload.
std::vector<double> collect_validation_predictions(const Workload& workload, const BranchPredictor& predictor,
                                                   std::int64_t interval, std::int64_t token_cap, std::uint64_t seed);

// Row-stochastic 5x5 matrix: row = true level, column = predicted level.
class ConfusionMatrix {
 public:
  using Rows = std::array<std::array<double, DifficultyLabel::kNumLevels>, DifficultyLabel::kNumLevels>;

  explicit ConfusionMatrix(const Rows& rows);

  static ConfusionMatrix identity();
  // Noise pinned to the reported predictor behavior: 81% of level-1 requests
  // predicted <= 3, 81% of level-5 predicted > 3, mean diagonal 0.42.
  static ConfusionMatrix reported_default();
  // Whitespace/comma separated, five rows of five probabilities.
  static ConfusionMatrix load(const std::filesystem::path& path);

  const Rows& rows() const { return rows_; }
  DifficultyLabel sample(DifficultyLabel actual, Rng& rng) const;

 private:
  Rows rows_;
};

enum class DifficultyMode { kActual, kMlp, kNoisyLabel };

class DifficultyPredictor {
 public:
  static DifficultyPredictor actual();
  static DifficultyPredictor mlp(MlpWeights weights);
  static DifficultyPredictor noisy(ConfusionMatrix matrix);

  DifficultyMode mode() const { return mode_; }

  // `label` is required in actual/noisy-label mode, `activation` in mlp mode.
  DifficultyLabel predict(std::optional<DifficultyLabel> label, std::span<const float> activation, Rng& rng) const;

 private:
  DifficultyMode mode_ = DifficultyMode::kActual;
  std::shared_ptr<const MlpModel> model_;
  std::optional<ConfusionMatrix> confusion_;
};

}  // namespace branchserve
