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
#include <limits>
#include <vector>

#include "dsg/dataset.hpp"
#include "dsg/network.hpp"

namespace dsg {

struct TrainConfig {
  int epochs = 4;
  double learning_rate = 0.05;
  double momentum = 0.9;     // SGD heavy-ball momentum
  Index batch_size = 64;
  double bn_momentum = 0.1;  // running = (1 - m) * running + m * batch
  std::uint64_t seed = 0;
};

struct TrainResult {
  Network net;
  double train_accuracy = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN without a validation set
  std::vector<double> epoch_loss;                                   // mean cross-entropy per epoch
};

/// Minibatch SGD on softmax cross-entropy. Batchnorm layers normalize with
/// batch statistics during training and update their running statistics;
/// the returned network uses the frozen running statistics.
TrainResult train_reference(Network net, const Dataset& train, const Dataset* validation, const TrainConfig& cfg);

}  // namespace dsg
