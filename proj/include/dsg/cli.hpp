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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dsg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitNumerical = 4;

/// Flat config file: `key=value` per line, `#` starts a comment, blank lines
/// are skipped. Keys are long flag names without the leading dashes.
std::vector<std::pair<std::string, std::string>> read_config(const std::filesystem::path& path);

/// Entry point for the `dsg` tool. Returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace dsg::cli
