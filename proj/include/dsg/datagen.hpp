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

// Diverse sample generation: synthesize a calibration batch from the stored
// BN statistics of a network by descending a slack-relaxed, per-sample
// weighted statistics-matching loss on the input pixels.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsg/network.hpp"
#include "dsg/tensor.hpp"

namespace dsg {

/// vanilla: zero margins, uniform weights (plain BN-statistics matching).
/// sda: probe margins, uniform weights. lse: zero margins, enhancement
/// weights. dsg: probe margins and enhancement weights.
enum class GenMode { kVanilla, kSda, kLse, kDsg };

std::string_view to_string(GenMode mode);
GenMode parse_gen_mode(std::string_view name);

struct GenConfig {
  GenMode mode = GenMode::kDsg;
  double epsilon = 0.9;  // 0 disables slack
  int iterations = 500;
  double learning_rate = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 0;  // 0 selects the network's BN layer count
  Index probe_count = 1024;
  std::uint64_t seed = 0;

  bool uses_margins() const { return (mode == GenMode::kSda || mode == GenMode::kDsg) && epsilon > 0.0; }
  bool uses_enhancement() const { return mode == GenMode::kLse || mode == GenMode::kDsg; }
};

/// Per BN layer i: delta[i], gamma[i] are [C_i] vectors, non-negative.
struct SlackMargins {
  std::vector<Tensor> delta, gamma;
};

struct LossBreakdown {
  Tensor per_sample_layer;  // [B,N]
  Tensor per_sample_total;  // [B]
  double total = 0.0;
};

/// Standard normal draws from Rng(seed), row-major.
Tensor init_gaussian(const Shape& shape, std::uint64_t seed);

/// Linear-interpolation order statistic at rank eps * (n - 1) of the ascending
/// sort. eps = 1 gives the maximum.
double percentile(std::span<const double> values, double eps);

SlackMargins zero_margins(const BnStats& bn);

/// delta[i][c] = eps-percentile over probe samples of |mean - mu|, gamma[i][c]
/// likewise for std. eps = 0 returns zero margins.
SlackMargins compute_margins(const FeatureStats& probe, const BnStats& bn, double eps);

/// sum_c max(|mu_t - mu| - delta, 0)^2 + max(|sigma_t - sigma| - gamma, 0)^2
double sda_sample_layer_loss(std::span<const double> mu_t, std::span<const double> sigma_t, const Tensor& mu,
                             const Tensor& sigma, const Tensor& delta, const Tensor& gamma);

/// [B,N] with w[k][i] = 1 + [i == k mod N]; equals I + 11^T when B = N.
Tensor lse_weights(Index batch, Index layers);
Tensor uniform_weights(Index batch, Index layers);

/// per_sample_total[k] = sum_i w[k][i] L[k][i]; total = sum_k per_sample_total[k] / (B N).
LossBreakdown dsg_loss(const Tensor& per_sample_layer, const Tensor& weights);

/// Records the per-sample SDA terms and the weighted total on `capture.tape`.
/// Returns (per_sample_layer [B,N], total [1]).
std::pair<Var, Var> record_dsg_objective(Capture& capture, const BnStats& bn, const SlackMargins& margins,
                                         const Tensor& weights);

/// Full loss and input gradient of one batch under the given margins/weights.
struct Objective {
  LossBreakdown loss;
  Tensor gradient;
};
Objective evaluate_objective(const Network& net, const Tensor& batch, const BnStats& bn,
                             const SlackMargins& margins, const Tensor& weights);

struct GenResult {
  Tensor batch;                       // x^s after the final update
  std::vector<LossBreakdown> history; // loss before each update
  SlackMargins margins;
  Tensor weights;
};

/// Runs the generation loop. Throws kNumerical naming the iteration if the
/// loss becomes non-finite.
GenResult generate(const Network& net, const GenConfig& cfg);

/// Writes data.bin + data.meta for the batch and gen.log ("iter,total_loss").
void save_generation(const GenResult& result, const std::filesystem::path& dir);

}  // namespace dsg
