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

#include "dsg/network.hpp"

namespace dsg {

// A model directory holds model.json (layer manifest: kinds, hyperparameters
// and, per parameter tensor, {name, shape, offset, count} with offsets in
// elements) and weights.bin (LE float64, concatenated in manifest order).
void save_model(const Network& net, const std::filesystem::path& dir);
Network load_model(const std::filesystem::path& dir);

}  // namespace dsg
