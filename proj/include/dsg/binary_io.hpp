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

// Little-endian flat files of float64 / int32 and small file utilities.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsg/tensor.hpp"

namespace dsg {

/// Reads exactly `count` LE float64 values; any other file size is a format error.
Tensor::Array read_f64_file(const std::filesystem::path& path, Index count);
void write_f64_file(const std::filesystem::path& path, const double* values, Index count);

std::vector<std::int32_t> read_i32_file(const std::filesystem::path& path, Index count);
void write_i32_file(const std::filesystem::path& path, const std::vector<std::int32_t>& values);

/// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// "%.17g" formatting used by every CSV and log writer.
std::string format_real(double v);

}  // namespace dsg
