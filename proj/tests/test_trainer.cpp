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
#include <gtest/gtest.h>

#include "dsg/trainer.hpp"
#include "test_util.hpp"

namespace dsg {
namespace {

TEST(Trainer, ZeroEpochsLeavesNetworkUnchanged) {
  const Network net = build_reference_cnn("cnn5bn", {1, 28, 28}, 10, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(train_reference(net, make_synthetic_digits(20, 1), nullptr, cfg).net, net);
}

TEST(Trainer, OverfitsSixtyFourSamples) {
  const Dataset d = make_synthetic_digits(64, 2);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 16;
  cfg.seed = 3;
  const TrainResult r = train_reference(build_reference_cnn("cnn5bn", {1, 28, 28}, 10, 3), d, &d, cfg);
  EXPECT_GE(r.train_accuracy, 0.95);
  EXPECT_EQ(r.epoch_loss.size(), 40u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(Trainer, SeedDeterminism) {
  const Dataset d = make_synthetic_digits(48, 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  const Network init = build_reference_cnn("res6bn", {1, 28, 28}, 10, 5);
  EXPECT_EQ(train_reference(init, d, nullptr, cfg).net, train_reference(init, d, nullptr, cfg).net);
}

TEST(Trainer, UpdatesRunningStatistics) {
  const Dataset d = make_synthetic_digits(32, 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  const Network init = build_reference_cnn("cnn5bn", {1, 28, 28}, 10, 7);
  const Network trained = train_reference(init, d, nullptr, cfg).net;
  const auto bn = init.bn_layers();
  // One step from (0, 1): running = 0.9 * old + 0.1 * batch moment.
  const Tensor in = bn_inputs(init, d.images)[0];
  const auto m = ops::per_channel_moments(in, false);
  const Layer& l = trained.layers[bn[0]];
  for (Index c = 0; c < m.mean.size(); ++c) {
    EXPECT_NEAR(l.running_mean[c], 0.1 * m.mean[c], 1e-12);
    EXPECT_NEAR(l.running_var[c], 0.9 + 0.1 * m.std[c] * m.std[c], 1e-12);
  }
}

TEST(Trainer, RejectsBadData) {
  const Network net = build_reference_cnn("cnn5bn", {1, 28, 28}, 10, 8);
  TrainConfig cfg;
  EXPECT_THROW(train_reference(net, Dataset{}, nullptr, cfg), Error);
  Dataset unlabeled{make_synthetic_digits(4, 1).images, {}};
  EXPECT_THROW(train_reference(net, unlabeled, nullptr, cfg), Error);
  Dataset bad = make_synthetic_digits(4, 1);
  bad.labels[0] = 10;
  EXPECT_THROW(train_reference(net, bad, nullptr, cfg), Error);
}

}  // namespace
}  // namespace dsg
