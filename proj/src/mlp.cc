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

#include "branchserve/mlp.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace branchserve {

static_assert(std::endian::native == std::endian::little, "weight blobs are read as native little-endian floats");

namespace {

std::string shape_str(std::size_t rows, std::size_t cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

void expect_size(const std::vector<float>& v, std::size_t n, const std::string& what) {
  if (v.size() != n) {
    throw DataError(what + ": expected " + std::to_string(n) + " values, got " + std::to_string(v.size()));
  }
}

DenseLayer make_dense(std::size_t in, std::size_t out, bool batch_norm) {
  DenseLayer layer;
  layer.in_dim = in;
  layer.out_dim = out;
  layer.weight.assign(in * out, 0.0f);
  layer.bias.assign(out, 0.0f);
  if (batch_norm) {
    layer.batch_norm = BatchNormParams{std::vector<float>(out, 0.0f), std::vector<float>(out, 1.0f),
                                       std::vector<float>(out, 1.0f), std::vector<float>(out, 0.0f)};
  }
  return layer;
}

Eigen::VectorXd to_vec(const std::vector<float>& v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

Eigen::MatrixXd to_mat(const std::vector<float>& v, std::size_t rows, std::size_t cols) {
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return m.cast<double>();
}

const char* activation_name(HiddenActivation a) { return a == HiddenActivation::kRelu ? "relu" : "gelu"; }

}  // namespace

void MlpWeights::validate() const {
  if (input_dim == 0) throw DataError("mlp: input_dim must be positive");
  if (head_dim == 0) throw DataError("mlp: head_dim must be positive");
  if (hidden.size() != layer_dims.size()) {
    throw DataError("mlp: " + std::to_string(layer_dims.size()) + " layer_dims declared but " +
                    std::to_string(hidden.size()) + " hidden layers present");
  }
  if (input_norm == InputNorm::kLayerNorm) {
    expect_size(ln_gain, input_dim, "mlp: layer-norm gain");
    expect_size(ln_bias, input_dim, "mlp: layer-norm bias");
  }
  std::size_t in = input_dim;
  auto check_layer = [&](const DenseLayer& layer, std::size_t out, const std::string& name, bool want_bn) {
    if (layer.in_dim != in || layer.out_dim != out) {
      throw DataError("mlp: " + name + " has shape " + shape_str(layer.out_dim, layer.in_dim) + ", expected " +
                      shape_str(out, in));
    }
    expect_size(layer.weight, in * out, "mlp: " + name + " weight");
    expect_size(layer.bias, out, "mlp: " + name + " bias");
    if (want_bn != layer.batch_norm.has_value()) {
      throw DataError("mlp: " + name + (want_bn ? " is missing batch-norm statistics" : " has unexpected batch-norm"));
    }
    if (layer.batch_norm) {
      const auto& bn = *layer.batch_norm;
      expect_size(bn.running_mean, out, "mlp: " + name + " running_mean");
      expect_size(bn.running_var, out, "mlp: " + name + " running_var");
      expect_size(bn.gain, out, "mlp: " + name + " bn gain");
      expect_size(bn.bias, out, "mlp: " + name + " bn bias");
      for (float v : bn.running_var) {
        if (!(v > 0.0f)) throw DataError("mlp: " + name + " has a non-positive running variance");
      }
    }
    in = out;
  };
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    check_layer(hidden[l], layer_dims[l], "hidden layer " + std::to_string(l), hidden_norm == HiddenNorm::kBatchNorm);
  }
  check_layer(head, head_dim, "output layer", false);
}

MlpWeights MlpWeights::zeros(std::size_t input_dim, std::vector<std::size_t> layer_dims, std::size_t head_dim,
                             HiddenActivation activation, HiddenNorm hidden_norm) {
  MlpWeights w;
  w.input_dim = input_dim;
  w.layer_dims = std::move(layer_dims);
  w.head_dim = head_dim;
  w.activation = activation;
  w.hidden_norm = hidden_norm;
  w.ln_gain.assign(input_dim, 1.0f);
  w.ln_bias.assign(input_dim, 0.0f);
  std::size_t in = input_dim;
  for (std::size_t out : w.layer_dims) {
    w.hidden.push_back(make_dense(in, out, hidden_norm == HiddenNorm::kBatchNorm));
    in = out;
  }
  w.head = make_dense(in, head_dim, false);
  return w;
}

MlpWeights MlpWeights::random(std::size_t input_dim, std::vector<std::size_t> layer_dims, std::size_t head_dim,
                              HiddenActivation activation, HiddenNorm hidden_norm, Rng& rng) {
  MlpWeights w = zeros(input_dim, std::move(layer_dims), head_dim, activation, hidden_norm);
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  for (auto& g : w.ln_gain) g = 1.0f + 0.1f * unit(rng);
  for (auto& b : w.ln_bias) b = 0.1f * unit(rng);
  auto fill = [&](DenseLayer& layer) {
    const float scale = 1.0f / std::sqrt(static_cast<float>(layer.in_dim));
    for (auto& x : layer.weight) x = scale * unit(rng);
    for (auto& x : layer.bias) x = scale * unit(rng);
    if (layer.batch_norm) {
      for (auto& x : layer.batch_norm->running_mean) x = 0.2f * unit(rng);
      for (auto& x : layer.batch_norm->running_var) x = 0.5f + 0.4f * (unit(rng) + 1.0f);
      for (auto& x : layer.batch_norm->gain) x = 1.0f + 0.1f * unit(rng);
      for (auto& x : layer.batch_norm->bias) x = 0.1f * unit(rng);
    }
  };
  for (auto& layer : w.hidden) fill(layer);
  fill(w.head);
  return w;
}

MlpWeights MlpWeights::correctness_probe_zeros(std::size_t input_dim, std::vector<std::size_t> hidden) {
  return zeros(input_dim, std::move(hidden), 1, HiddenActivation::kRelu, HiddenNorm::kNone);
}

MlpWeights MlpWeights::complexity_head_zeros(std::size_t input_dim, std::vector<std::size_t> hidden) {
  return zeros(input_dim, std::move(hidden), DifficultyLabel::kNumLevels, HiddenActivation::kGelu,
               HiddenNorm::kBatchNorm);
}

std::size_t MlpOutput::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

MlpModel::MlpModel(MlpWeights weights) : weights_(std::move(weights)) {
  weights_.validate();
  if (weights_.input_norm == InputNorm::kLayerNorm) {
    ln_gain_ = to_vec(weights_.ln_gain);
    ln_bias_ = to_vec(weights_.ln_bias);
  }
  auto prepare = [&](const DenseLayer& layer) {
    Prepared p{to_mat(layer.weight, layer.out_dim, layer.in_dim), to_vec(layer.bias), std::nullopt};
    if (layer.batch_norm) {
      const auto& bn = *layer.batch_norm;
      Eigen::VectorXd scale(static_cast<Eigen::Index>(layer.out_dim));
      Eigen::VectorXd shift(static_cast<Eigen::Index>(layer.out_dim));
      for (std::size_t j = 0; j < layer.out_dim; ++j) {
        const double s = bn.gain[j] / std::sqrt(static_cast<double>(bn.running_var[j]) + weights_.eps);
        scale[static_cast<Eigen::Index>(j)] = s;
        shift[static_cast<Eigen::Index>(j)] = bn.bias[j] - bn.running_mean[j] * s;
      }
      p.bn.emplace(std::move(scale), std::move(shift));
    }
    return p;
  };
  for (const auto& layer : weights_.hidden) layers_.push_back(prepare(layer));
  head_ = prepare(weights_.head);
}

MlpOutput MlpModel::forward(std::span<const float> activation) const {
  if (activation.size() != weights_.input_dim) {
    throw DataError("mlp: activation has shape [" + std::to_string(activation.size()) + "], expected [" +
                    std::to_string(weights_.input_dim) + "]");
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(activation.size()));
  for (std::size_t i = 0; i < activation.size(); ++i) x[static_cast<Eigen::Index>(i)] = activation[i];

  if (weights_.input_norm == InputNorm::kLayerNorm) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    x = ((x.array() - mean) / std::sqrt(var + weights_.eps)).matrix();
    x = x.cwiseProduct(ln_gain_) + ln_bias_;
  }
  for (const auto& layer : layers_) {
    Eigen::VectorXd h = layer.weight * x + layer.bias;
    if (layer.bn) h = h.cwiseProduct(layer.bn->first) + layer.bn->second;
    if (weights_.activation == HiddenActivation::kRelu) {
      h = h.cwiseMax(0.0);
    } else {
      h = h.unaryExpr([](double v) { return gelu(v); });
    }
    x = std::move(h);
  }
  const Eigen::VectorXd logits = head_.weight * x + head_.bias;

  MlpOutput out;
  out.logits.assign(logits.data(), logits.data() + logits.size());
  if (weights_.is_correctness_head()) {
    out.probs = {1.0 / (1.0 + std::exp(-out.logits[0]))};
  } else {
    const double mx = logits.maxCoeff();
    const Eigen::ArrayXd e = (logits.array() - mx).exp();
    const double z = e.sum();
    out.probs.resize(out.logits.size());
    for (Eigen::Index j = 0; j < e.size(); ++j) out.probs[static_cast<std::size_t>(j)] = e[j] / z;
  }
  return out;
}

MlpOutput mlp_forward(const MlpWeights& weights, std::span<const float> activation) {
  return MlpModel(weights).forward(activation);
}

// ---- weight files ----

namespace {

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> dims;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      dims.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw DataError("mlp manifest: bad layer dimension '" + item + "'");
    }
  }
  return dims;
}

class BlobReader {
 public:
  explicit BlobReader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("mlp: cannot open weight blob " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), {});
    if (bytes_.size() % sizeof(float) != 0) throw DataError("mlp: weight blob size is not a multiple of 4 bytes");
  }

  std::vector<float> take(std::size_t n, const std::string& what) {
    const std::size_t need = n * sizeof(float);
    if (offset_ + need > bytes_.size()) {
      throw DataError("mlp: weight blob too short while reading " + what + " (" + std::to_string(n) + " floats)");
    }
    std::vector<float> out(n);
    std::memcpy(out.data(), bytes_.data() + offset_, need);
    offset_ += need;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  std::vector<char> bytes_;
  std::size_t offset_ = 0;
};

void write_floats(std::ofstream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::filesystem::path default_blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p += ".bin";
  return p;
}

}  // namespace

MlpWeights load_mlp(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("mlp: cannot open manifest " + manifest.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("mlp manifest line " + std::to_string(lineno) + ": expected key=value");
    }
    auto strip = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("mlp manifest: missing key '" + key + "'");
    return it->second;
  };

  MlpWeights w;
  try {
    w.input_dim = std::stoul(get("input_dim"));
    w.layer_dims = parse_dims(get("layer_dims"));
    w.head_dim = std::stoul(get("head_dim"));
    if (kv.count("source_layer")) w.source_layer = std::stoi(kv["source_layer"]);
    if (kv.count("eps")) w.eps = std::stod(kv["eps"]);
  } catch (const std::logic_error& e) {
    throw DataError(std::string("mlp manifest: bad numeric value (") + e.what() + ")");
  }
  const std::string act = kv.count("activation") ? kv["activation"] : "relu";
  if (act == "relu") {
    w.activation = HiddenActivation::kRelu;
  } else if (act == "gelu") {
    w.activation = HiddenActivation::kGelu;
  } else {
    throw DataError("mlp manifest: unknown activation '" + act + "'");
  }
  const std::string in_norm = kv.count("input_norm") ? kv["input_norm"] : "layernorm";
  if (in_norm == "layernorm") {
    w.input_norm = InputNorm::kLayerNorm;
  } else if (in_norm == "none") {
    w.input_norm = InputNorm::kNone;
  } else {
    throw DataError("mlp manifest: unknown input_norm '" + in_norm + "'");
  }
  const std::string hid_norm = kv.count("hidden_norm") ? kv["hidden_norm"] : "none";
  if (hid_norm == "batchnorm") {
    w.hidden_norm = HiddenNorm::kBatchNorm;
  } else if (hid_norm == "none") {
    w.hidden_norm = HiddenNorm::kNone;
  } else {
    throw DataError("mlp manifest: unknown hidden_norm '" + hid_norm + "'");
  }

  const auto blob_path =
      kv.count("blob") ? manifest.parent_path() / kv["blob"] : default_blob_path(manifest);
  BlobReader blob(blob_path);
  if (w.input_norm == InputNorm::kLayerNorm) {
    w.ln_gain = blob.take(w.input_dim, "layer-norm gain");
    w.ln_bias = blob.take(w.input_dim, "layer-norm bias");
  }
  auto read_layer = [&](std::size_t in_dim, std::size_t out_dim, bool bn, const std::string& name) {
    DenseLayer layer;
    layer.in_dim = in_dim;
    layer.out_dim = out_dim;
    layer.weight = blob.take(in_dim * out_dim, name + " weight");
    layer.bias = blob.take(out_dim, name + " bias");
    if (bn) {
      BatchNormParams p;
      p.running_mean = blob.take(out_dim, name + " running_mean");
      p.running_var = blob.take(out_dim, name + " running_var");
      p.gain = blob.take(out_dim, name + " bn gain");
      p.bias = blob.take(out_dim, name + " bn bias");
      layer.batch_norm = std::move(p);
    }
    return layer;
  };
  std::size_t in_dim = w.input_dim;
  for (std::size_t l = 0; l < w.layer_dims.size(); ++l) {
    w.hidden.push_back(read_layer(in_dim, w.layer_dims[l], w.hidden_norm == HiddenNorm::kBatchNorm,
                                  "hidden layer " + std::to_string(l)));
    in_dim = w.layer_dims[l];
  }
  w.head = read_layer(in_dim, w.head_dim, false, "output layer");
  if (blob.remaining() != 0) {
    throw DataError("mlp: weight blob has " + std::to_string(blob.remaining()) + " trailing bytes");
  }
  w.validate();
  return w;
}

void save_mlp(const MlpWeights& weights, const std::filesystem::path& manifest) {
  weights.validate();
  const auto blob_path = default_blob_path(manifest);
  {
    std::ofstream out(manifest);
    if (!out) throw DataError("mlp: cannot write " + manifest.string());
    out << "format=branchserve-mlp\n";
    out << "version=1\n";
    out << "input_dim=" << weights.input_dim << "\n";
    out << "layer_dims=";
    for (std::size_t l = 0; l < weights.layer_dims.size(); ++l) out << (l ? "," : "") << weights.layer_dims[l];
    out << "\n";
    out << "head_dim=" << weights.head_dim << "\n";
    out << "activation=" << activation_name(weights.activation) << "\n";
    out << "input_norm=" << (weights.input_norm == InputNorm::kLayerNorm ? "layernorm" : "none") << "\n";
    out << "hidden_norm=" << (weights.hidden_norm == HiddenNorm::kBatchNorm ? "batchnorm" : "none") << "\n";
    out << "source_layer=" << weights.source_layer << "\n";
    out << "eps=" << weights.eps << "\n";
    out << "blob=" << blob_path.filename().string() << "\n";
  }
  std::ofstream out(blob_path, std::ios::binary);
  if (!out) throw DataError("mlp: cannot write " + blob_path.string());
  if (weights.input_norm == InputNorm::kLayerNorm) {
    write_floats(out, weights.ln_gain);
    write_floats(out, weights.ln_bias);
  }
  auto write_layer = [&](const DenseLayer& layer) {
    write_floats(out, layer.weight);
    write_floats(out, layer.bias);
    if (layer.batch_norm) {
      write_floats(out, layer.batch_norm->running_mean);
      write_floats(out, layer.batch_norm->running_var);
      write_floats(out, layer.batch_norm->gain);
      write_floats(out, layer.batch_norm->bias);
    }
  };
  for (const auto& layer : weights.hidden) write_layer(layer);
  write_layer(weights.head);
}

std::vector<std::vector<float>> load_activations(const std::filesystem::path& path, std::size_t input_dim) {
  if (input_dim == 0) throw DataError("activations: input_dim must be positive");
  const auto ext = path.extension().string();
  std::vector<std::vector<float>> out;
  if (ext == ".bin" || ext == ".f32") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("activations: cannot open " + path.string());
    std::vector<char> bytes(std::istreambuf_iterator<char>(in), {});
    const std::size_t row_bytes = input_dim * sizeof(float);
    if (bytes.empty() || bytes.size() % row_bytes != 0) {
      throw DataError("activations: " + path.string() + " holds " + std::to_string(bytes.size()) +
                      " bytes, not a positive multiple of " + std::to_string(input_dim) + " floats");
    }
    for (std::size_t off = 0; off < bytes.size(); off += row_bytes) {
      std::vector<float> row(input_dim);
      std::memcpy(row.data(), bytes.data() + off, row_bytes);
      out.push_back(std::move(row));
    }
    return out;
  }
  std::ifstream in(path);
  if (!in) throw DataError("activations: cannot open " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream ss(line);
    std::vector<float> row;
    std::string tok;
    while (ss >> tok) {
      try {
        row.push_back(std::stof(tok));
      } catch (const std::exception&) {
        throw DataError("activations line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (row.size() != input_dim) {
      throw DataError("activations line " + std::to_string(lineno) + ": expected " + std::to_string(input_dim) +
                      " values, got " + std::to_string(row.size()));
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace branchserve
