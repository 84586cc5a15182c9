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

// Uniform affine (asymmetric, per-tensor) fake quantization and activation
// range calibration.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsg/dataset.hpp"
#include "dsg/network.hpp"

namespace dsg {

struct QuantParams {
  int bits = 8;
  double scale = 1.0;
  std::int64_t zero_point = 0;

  std::int64_t qmin() const { return 0; }
  std::int64_t qmax() const { return (std::int64_t{1} << bits) - 1; }
  /// Smallest and largest representable values.
  double lo() const { return double(qmin() - zero_point) * scale; }
  double hi() const { return double(qmax() - zero_point) * scale; }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Scale used when the fitted range is empty (constant data).
inline constexpr double kDegenerateScale = 1e-8;

/// Throws unless bits in [2,8], scale > 0 and zero_point in [qmin, qmax].
void check_params(const QuantParams& p);

/// Round half away from zero.
double round_half_away(double x);

/// q = clamp(round(x / scale) + zero_point, qmin, qmax); returns (q - zero_point) * scale.
double fake_quant(double x, const QuantParams& p);
Tensor fake_quant(const Tensor& x, const QuantParams& p);

/// Params covering [lo, hi]: scale = (hi - lo) / (qmax - qmin),
/// zero_point = clamp(round(-lo / scale)). hi == lo falls back to the
/// degenerate convention (scale 1e-8, zero_point qmin).
QuantParams fit_range(double lo, double hi, int bits);

QuantParams fit_minmax(std::span<const double> values, int bits);
/// Endpoints are the (1 - p) and p order statistics (see percentile()).
QuantParams fit_percentile(std::span<const double> values, int bits, double p);
/// Running extremes m <- momentum * m + (1 - momentum) * batch_extreme, seeded by the first batch.
QuantParams fit_ema(const std::vector<std::vector<double>>& batches, int bits, double momentum);
/// Best of c * (min, max) for `grid_points` values of c uniformly on [0.1, 1]; ties go to the larger c.
QuantParams fit_mse(std::span<const double> values, int bits, int grid_points);

/// Squared reconstruction error sum (x - fake_quant(x))^2.
double quant_sse(std::span<const double> values, const QuantParams& p);

struct Calibrator {
  enum class Kind { kMinMax, kPercentile, kEma, kMse };
  Kind kind = Kind::kMinMax;
  double percentile = 0.9999;
  double momentum = 0.9;
  int grid_points = 100;
  Index ema_sub_batch = 8;

  std::string name() const;
  static Calibrator parse(std::string_view name);
};

/// Fake-quantized network. Weights of conv/dense layers are stored already
/// quantized in `net`; activation sites apply fake_quant on the fly.
struct QuantizedNetwork {
  Network net;
  std::optional<int> weight_bits;                  // nullopt: full-precision weights
  std::vector<std::size_t> weight_layers;
  std::vector<QuantParams> weight_params;
  std::optional<int> activation_bits;              // nullopt: no activation quantization
  std::vector<std::size_t> site_layers;            // layer whose output is quantized
  std::vector<std::optional<QuantParams>> site_params;
  std::string calibrator;
};

/// Outputs of conv, dense, residual_add and pooling layers, each moved past
/// any directly following batchnorm/relu layers (the site sees the block
/// output, e.g. post-ReLU).
std::vector<std::size_t> activation_sites(const Network& net);

/// Per-tensor MinMax quantization of every conv/dense weight. BN parameters
/// and biases stay in full precision. bits = nullopt leaves weights untouched.
QuantizedNetwork quantize_weights(const Network& net, std::optional<int> bits);

/// Fits every activation site on `calib` (weights quantized, activations in
/// full precision). EMA walks the batch in sub-batches of `ema_sub_batch`.
QuantizedNetwork calibrate_activations(QuantizedNetwork qnet, const Tensor& calib, const Calibrator& kind,
                                       std::optional<int> bits);

Tensor forward_quantized(const QuantizedNetwork& qnet, const Tensor& batch);
double eval_quantized(const QuantizedNetwork& qnet, const Dataset& data, int threads = 1);

/// CSV: site,kind,bits,scale,zero_point,range_lo,range_hi. One row per
/// weight tensor, then one per activation site.
std::string calibration_report(const QuantizedNetwork& qnet);

}  // namespace dsg
