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
#include <filesystem>
#include <vector>

#include "dsg/tensor.hpp"

namespace dsg {

/// Images [B,C,H,W] with optional integer labels (empty for unlabeled data
/// such as a synthetic calibration batch).
struct Dataset {
  Tensor images;
  std::vector<std::int32_t> labels;

  Index size() const { return images.empty() ? 0 : images.dim(0); }
  bool labeled() const { return !labels.empty(); }
  Dataset subset(Index begin, Index end) const;
};

// IDX files: big-endian header, unsigned-byte pixels scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Pixels are clamped to [0,1] and rounded to the nearest byte.
void save_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

// Raw files in `dir`: data.bin (LE float64), data.meta ("shape=B,C,H,W"),
// labels.bin (LE int32, optional).
Dataset load_raw(const std::filesystem::path& dir);
void save_raw(const Dataset& data, const std::filesystem::path& dir);

/// Loads a dataset directory in either layout: raw (data.meta present) or
/// IDX (images.idx + labels.idx).
Dataset load_dataset(const std::filesystem::path& dir);

/// Procedurally rendered handwriting-like digits 0-9 at 1x28x28, classes
/// balanced (label = index mod 10) with random stroke jitter, affine warp,
/// stroke width and pixel noise.
Dataset make_synthetic_digits(Index count, std::uint64_t seed);

/// Pixel mean and std of the synthetic digits (measured on 6000 images).
inline constexpr double kDigitsMean = 0.1407;
inline constexpr double kDigitsStd = 0.2809;

/// In place: x <- (x - mean) / std.
void standardize(Dataset& data, double mean, double std);

}  // namespace dsg
