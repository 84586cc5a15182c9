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

// Sample-diversity statistics: how spread out per-sample BN-input moments
// are, and how far the batch sits from the stored BN statistics.

#include <filesystem>
#include <string>
#include <vector>

#include "dsg/network.hpp"

namespace dsg {

/// Per BN layer, per channel ([C_i] each).
struct DispersionReport {
  std::vector<Tensor> mean_dispersion;  // std over samples of per-sample means
  std::vector<Tensor> std_dispersion;   // std over samples of per-sample stds
  std::vector<Tensor> mean_offset;      // |batch mean - mu|
  std::vector<Tensor> std_offset;       // |batch std - sigma|

  std::size_t layers() const { return mean_dispersion.size(); }
};

/// Needs per-sample statistics with at least two samples. Batch moments are
/// pooled from the per-sample moments (equal spatial extent per sample).
DispersionReport dispersion(const FeatureStats& stats, const BnStats& bn);

inline constexpr double kRatioFloor = 1e-12;

/// Per-layer medians over channels of a / max(b, 1e-12), field by field.
struct DispersionRatios {
  std::vector<double> mean_dispersion, std_dispersion, mean_offset, std_offset;
};

DispersionRatios compare_dispersion(const DispersionReport& a, const DispersionReport& b);

/// Median with the two middle values averaged for even counts.
double median(std::vector<double> values);

/// CSV: layer,channel,mean_dispersion,std_dispersion,mean_offset,std_offset
std::string dispersion_csv(const DispersionReport& r);
/// CSV: layer,mean_dispersion,std_dispersion,mean_offset,std_offset
std::string ratios_csv(const DispersionRatios& r);

/// Writes `path` with rows sample_id,value for every spatial position of
/// `channel` in the [B,C,H,W] activation, and a sidecar `<path>.bn.csv`
/// holding "mu,sigma" of that channel.
void export_histogram(const Tensor& activation, Index channel, double mu, double sigma,
                      const std::filesystem::path& path);

/// Convenience: histogram of BN layer `layer`'s input for `batch`.
void export_bn_histogram(const Network& net, const Tensor& batch, std::size_t layer, Index channel,
                         const std::filesystem::path& path);

}  // namespace dsg
