/**
 * Copyright 2026 The DSG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dsg/dataset.hpp"
#include "dsg/tape.hpp"
#include "dsg/tensor.hpp"

namespace dsg {

inline constexpr double kBnEpsilon = 1e-5;

enum class LayerKind {
  kConv,
  kBatchNorm,
  kRelu,
  kMaxPool,
  kGlobalAvgPool,
  kDense,
  kResidualBegin,
  kResidualAdd,
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One entry of the layer list. Only the fields relevant to `kind` are set.
struct Layer {
  LayerKind kind = LayerKind::kRelu;
  Index stride = 1;  // conv, maxpool
  Index pad = 0;     // conv
  Index kernel = 0;  // maxpool window
  Tensor weight, bias;                            // conv [Cout,Cin,kh,kw] / dense [O,F]
  Tensor gamma, beta, running_mean, running_var;  // batchnorm [C]

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// A small feed-forward CNN. residual_begin saves the current activation and
/// the matching residual_add adds it back (identity shortcut).
struct Network {
  std::string arch;
  Shape input_shape;  // {C,H,W}
  Index classes = 0;
  std::vector<Layer> layers;

  std::vector<std::size_t> bn_layers() const;
  std::size_t bn_count() const { return bn_layers().size(); }

  friend bool operator==(const Network&, const Network&) = default;
};

/// Checks parameter shapes, layer compatibility, residual pairing and N >= 1.
void validate(const Network& net);

/// Output shape of every layer for a batch of `batch` samples.
std::vector<Shape> layer_output_shapes(const Network& net, Index batch);

/// Registered architectures: "cnn5bn" (three conv-BN-ReLU blocks) and
/// "res6bn" (two residual blocks, six BN layers).
std::vector<std::string> reference_architectures();
Network build_reference_cnn(std::string_view arch, const Shape& input_shape, Index classes, std::uint64_t seed);

/// Stored BN statistics: mu = running_mean, sigma = sqrt(running_var + eps).
struct BnStats {
  std::vector<Tensor> mu, sigma;

  std::size_t layers() const { return mu.size(); }
};

BnStats extract_bn_stats(const Network& net);

/// Per-channel moments of every BN layer's input. mean[i] and std[i] are
/// [B,C_i] when per_sample, else [1,C_i].
struct FeatureStats {
  bool per_sample = true;
  std::vector<Tensor> mean, std;

  std::size_t layers() const { return mean.size(); }
  Index samples() const { return mean.empty() ? 0 : mean.front().dim(0); }
};

/// Called with each layer's output; may modify it in place.
using LayerHook = std::function<void(std::size_t layer, Tensor& activation)>;

Tensor forward(const Network& net, const Tensor& batch, const LayerHook& hook = {});

/// Inputs of each BN layer, in order.
std::vector<Tensor> bn_inputs(const Network& net, const Tensor& batch);

/// Non-differentiable moments of the BN inputs. Processes the batch in chunks.
FeatureStats feature_stats(const Network& net, const Tensor& batch, bool per_sample);

/// Differentiable forward pass recording BN-input moments on a tape.
struct Capture {
  Tape<double> tape;
  Var input;
  Var logits;
  std::vector<Var> bn_mean, bn_std;  // per BN layer, [B,C] or [C]
  FeatureStats stats;
};

Capture forward_capture(const Network& net, const Tensor& batch, bool per_sample);

/// Index of the largest logit per row; ties go to the lowest index.
std::vector<Index> predict(const Tensor& logits);

/// Top-1 accuracy. `threads` > 1 shards the dataset; the count reduction is exact.
double evaluate_accuracy(const Network& net, const Dataset& data, int threads = 1);

/// Top-1 accuracy of an arbitrary forward function over the dataset.
double evaluate_with(const std::function<Tensor(const Tensor&)>& forward_fn, const Dataset& data, int threads = 1);

}  // namespace dsg
