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

// Straight-line reference forward pass used as a test oracle.

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "branchserve/mlp.h"

namespace branchserve::testing {

inline std::vector<double> naive_affine(const DenseLayer& layer, const std::vector<double>& x) {
  std::vector<double> y(layer.out_dim);
  for (std::size_t o = 0; o < layer.out_dim; ++o) {
    double acc = layer.bias[o];
    for (std::size_t i = 0; i < layer.in_dim; ++i) acc += static_cast<double>(layer.weight[o * layer.in_dim + i]) * x[i];
    y[o] = acc;
  }
  return y;
}

inline std::vector<double> naive_forward(const MlpWeights& w, std::span<const float> a) {
  std::vector<double> x(a.begin(), a.end());
  const double n = static_cast<double>(x.size());
  if (w.input_norm == InputNorm::kLayerNorm) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = (x[i] - mean) / std::sqrt(var + w.eps) * w.ln_gain[i] + w.ln_bias[i];
    }
  }
  for (const auto& layer : w.hidden) {
    auto h = naive_affine(layer, x);
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (layer.batch_norm) {
        const auto& bn = *layer.batch_norm;
        h[j] = (h[j] - bn.running_mean[j]) / std::sqrt(static_cast<double>(bn.running_var[j]) + w.eps) * bn.gain[j] +
               bn.bias[j];
      }
      if (w.activation == HiddenActivation::kRelu) {
        h[j] = h[j] > 0.0 ? h[j] : 0.0;
      } else {
        h[j] = 0.5 * h[j] * (1.0 + std::erf(h[j] / std::sqrt(2.0)));
      }
    }
    x = h;
  }
  auto logits = naive_affine(w.head, x);
  if (logits.size() == 1) return {1.0 / (1.0 + std::exp(-logits[0]))};
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  for (double& v : logits) v = std::exp(v) / z;
  return logits;
}

}  // namespace branchserve::testing
