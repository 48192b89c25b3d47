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

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "branchserve/core.h"

namespace branchserve {

enum class HiddenActivation { kRelu, kGelu };
enum class InputNorm { kNone, kLayerNorm };
enum class HiddenNorm { kNone, kBatchNorm };

// Inference-mode batch-norm statistics for one hidden layer.
struct BatchNormParams {
  std::vector<float> running_mean;
  std::vector<float> running_var;
  std::vector<float> gain;
  std::vector<float> bias;
};

struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<float> weight;  // out_dim x in_dim, row-major
  std::vector<float> bias;    // out_dim
  std::optional<BatchNormParams> batch_norm;
};

// Frozen probe network:
//   [layer-norm] -> (affine -> [batch-norm] -> activation) per hidden layer -> affine head.
// A head of width 1 is a correctness probe (sigmoid); width > 1 is a
// complexity classifier (softmax). Dropout is identity at inference and has no weights.
struct MlpWeights {
  std::size_t input_dim = 0;
  std::vector<std::size_t> layer_dims;
  std::size_t head_dim = 1;
  HiddenActivation activation = HiddenActivation::kRelu;
  InputNorm input_norm = InputNorm::kLayerNorm;
  HiddenNorm hidden_norm = HiddenNorm::kNone;
  int source_layer = 14;  // transformer layer the activations come from (metadata only)
  double eps = 1e-5;

  std::vector<float> ln_gain;  // input_dim, when input_norm = kLayerNorm
  std::vector<float> ln_bias;
  std::vector<DenseLayer> hidden;
  DenseLayer head;

  bool is_correctness_head() const { return head_dim == 1; }

  // Throws DataError describing the first shape or statistics problem.
  void validate() const;

  // Allocates a well-formed network with all weights and biases zero, unit
  // layer-norm gain and unit running variance.
  static MlpWeights zeros(std::size_t input_dim, std::vector<std::size_t> layer_dims, std::size_t head_dim,
                          HiddenActivation activation, HiddenNorm hidden_norm);

  // Same shapes as zeros() with parameters drawn from a seeded generator:
  // weights ~ U(-1/sqrt(in), 1/sqrt(in)), norms perturbed around identity.
  static MlpWeights random(std::size_t input_dim, std::vector<std::size_t> layer_dims, std::size_t head_dim,
                           HiddenActivation activation, HiddenNorm hidden_norm, Rng& rng);

  // Architectures used for the two predictors.
  static MlpWeights correctness_probe_zeros(std::size_t input_dim = 4096,
                                            std::vector<std::size_t> hidden = {2048, 1024});
  static MlpWeights complexity_head_zeros(std::size_t input_dim = 4096,
                                          std::vector<std::size_t> hidden = {2048, 1024, 512});
};

struct MlpOutput {
  std::vector<double> logits;
  // Sigmoid of the single logit for a correctness head; softmax distribution otherwise.
  std::vector<double> probs;

  std::size_t argmax() const;
};

// Prepared network for repeated evaluation.
class MlpModel {
 public:
  explicit MlpModel(MlpWeights weights);

  const MlpWeights& weights() const { return weights_; }
  MlpOutput forward(std::span<const float> activation) const;

 private:
  struct Prepared {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
    // Batch-norm folded to y = x * scale + shift.
    std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> bn;
  };

  MlpWeights weights_;
  Eigen::VectorXd ln_gain_;
  Eigen::VectorXd ln_bias_;
  std::vector<Prepared> layers_;
  Prepared head_;
};

// One-shot forward pass. Throws DataError on a dimension mismatch.
MlpOutput mlp_forward(const MlpWeights& weights, std::span<const float> activation);

double gelu(double x);

// Weight file: `<manifest>` (key=value text) plus a little-endian float32 blob.
MlpWeights load_mlp(const std::filesystem::path& manifest);
void save_mlp(const MlpWeights& weights, const std::filesystem::path& manifest);

// Activation vectors: raw float32 (`.bin`, `.f32`; a multiple of input_dim
// floats) or text with one vector per line (whitespace/comma separated).
std::vector<std::vector<float>> load_activations(const std::filesystem::path& path, std::size_t input_dim);

}  // namespace branchserve
