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

#include "dsg/datagen.hpp"
#include "dsg/network.hpp"
#include "test_util.hpp"

namespace dsg {
namespace {

using testing::check_gradient;
using testing::project;
using testing::random_tensor;

// Values kept away from 0 so kinks (relu, abs) are not straddled by the step.
Tensor away_from_zero(const Shape& s, std::uint64_t seed) {
  Tensor t = random_tensor(s, seed, 0.1, 1.0);
  Rng rng(seed + 1000);
  for (Index i = 0; i < t.size(); ++i) {
    if (rng.uniform() < 0.5) t[i] = -t[i];
  }
  return t;
}

void expect_sound(const testing::LossBuilder& build, const Tensor& x) {
  const auto r = check_gradient(build, x);
  EXPECT_TRUE(r.ok) << "worst relative " << r.worst_rel << ", worst absolute " << r.worst_abs;
}

TEST(TapeGradient, SumGivesOnes) {
  Tape<double> t;
  Var x = t.input(random_tensor({2, 3}, 1));
  EXPECT_EQ(t.backprop_to_input(ad::sum(t, x), x), Tensor::constant({2, 3}, 1.0));
}

TEST(TapeGradient, ReluSubgradient) {
  Tape<double> t;
  Var x = t.input(Tensor({2}, {-1, 2}));
  EXPECT_EQ(t.backprop_to_input(ad::sum(t, ad::relu(t, x)), x), Tensor({2}, {0, 1}));
  Tape<double> z;
  Var x0 = z.input(Tensor({1}, {0.0}));
  EXPECT_EQ(z.backprop_to_input(ad::sum(z, ad::relu(z, x0)), x0)[0], 0.0);
}

TEST(TapeGradient, Conv2d) {
  const Tensor w = random_tensor({3, 2, 3, 3}, 2), b = random_tensor({3}, 3);
  for (auto [stride, pad] : {std::pair<Index, Index>{1, 1}, {2, 0}, {1, 0}}) {
    expect_sound([&](Tape<double>& t, Var x) { return project(t, ad::conv2d(t, x, w, b, stride, pad)); },
                 random_tensor({2, 2, 5, 5}, 4));
  }
}

TEST(TapeGradient, BatchNormApply) {
  const Tensor mean = random_tensor({3}, 5), std = random_tensor({3}, 6, 0.5, 2), gamma = random_tensor({3}, 7),
               beta = random_tensor({3}, 8);
  expect_sound([&](Tape<double>& t, Var x) { return project(t, ad::batchnorm_apply(t, x, mean, std, gamma, beta)); },
               random_tensor({2, 3, 2, 3}, 9));
}

TEST(TapeGradient, Relu) {
  expect_sound([](Tape<double>& t, Var x) { return project(t, ad::relu(t, x)); }, away_from_zero({2, 2, 3, 3}, 10));
}

TEST(TapeGradient, ResidualAdd) {
  expect_sound([](Tape<double>& t, Var x) { return project(t, ad::add(t, x, ad::relu(t, x))); },
               away_from_zero({2, 2, 3, 3}, 11));
}

TEST(TapeGradient, MaxPool) {
  expect_sound([](Tape<double>& t, Var x) { return project(t, ad::maxpool2d(t, x, 2, 2)); },
               random_tensor({2, 2, 4, 6}, 12));
}

TEST(TapeGradient, GlobalAvgPool) {
  expect_sound([](Tape<double>& t, Var x) { return project(t, ad::global_avgpool(t, x)); },
               random_tensor({2, 3, 3, 2}, 13));
}

TEST(TapeGradient, Dense) {
  const Tensor w = random_tensor({4, 12}, 14), b = random_tensor({4}, 15);
  expect_sound([&](Tape<double>& t, Var x) { return project(t, ad::dense(t, x, w, b)); },
               random_tensor({3, 3, 2, 2}, 16));
}

TEST(TapeGradient, MomentsPerSample) {
  expect_sound(
      [](Tape<double>& t, Var x) {
        auto [m, s] = ad::moments(t, x, true);
        return ad::add(t, project(t, m, 1), project(t, s, 2));
      },
      random_tensor({3, 2, 3, 3}, 17));
}

TEST(TapeGradient, MomentsBatch) {
  expect_sound(
      [](Tape<double>& t, Var x) {
        auto [m, s] = ad::moments(t, x, false);
        return ad::add(t, project(t, m, 1), project(t, s, 2));
      },
      random_tensor({3, 2, 3, 3}, 18));
}

TEST(TapeGradient, HingeSquareComposite) {
  const Tensor target = random_tensor({3}, 19), margin = random_tensor({3}, 20, 0.05, 0.3);
  expect_sound(
      [&](Tape<double>& t, Var x) {
        Var gap = ad::abs(t, ad::sub_row(t, x, target));
        Var excess = ad::relu(t, ad::sub_row(t, gap, margin));
        Var rows = ad::row_sum(t, ad::square(t, excess));
        return project(t, ad::stack_columns(t, {rows, ad::square(t, rows)}));
      },
      random_tensor({4, 3}, 21, -2, 2));
}

TEST(TapeGradient, WeightedSumScale) {
  const Tensor w = random_tensor({2, 3}, 22);
  Tape<double> t;
  Var x = t.input(random_tensor({2, 3}, 23));
  Tensor g = t.backprop_to_input(ad::weighted_sum(t, x, w, 0.25), x);
  Tensor expect(w.shape());
  expect.array() = 0.25 * w.array();
  EXPECT_EQ(g, expect);
}

TEST(TapeGradient, ToyNetworkLogits) {
  const Network net = testing::toy_network(3, true);
  expect_sound(
      [&](Tape<double>& t, Var x) {
        // Rebuild the forward on this tape through forward_capture's value path.
        Var h = x;
        std::vector<Var> saved;
        for (const Layer& l : net.layers) {
          switch (l.kind) {
            case LayerKind::kConv:
              h = ad::conv2d(t, h, l.weight, l.bias, l.stride, l.pad);
              break;
            case LayerKind::kBatchNorm: {
              Tensor s(l.running_var.shape());
              s.array() = (l.running_var.array() + kBnEpsilon).sqrt();
              h = ad::batchnorm_apply(t, h, l.running_mean, s, l.gamma, l.beta);
              break;
            }
            case LayerKind::kRelu:
              h = ad::relu(t, h);
              break;
            case LayerKind::kMaxPool:
              h = ad::maxpool2d(t, h, l.kernel, l.stride);
              break;
            case LayerKind::kGlobalAvgPool:
              h = ad::global_avgpool(t, h);
              break;
            case LayerKind::kDense:
              h = ad::dense(t, h, l.weight, l.bias);
              break;
            case LayerKind::kResidualBegin:
              saved.push_back(h);
              break;
            case LayerKind::kResidualAdd:
              h = ad::add(t, h, saved.back());
              saved.pop_back();
              break;
          }
        }
        return project(t, h);
      },
      random_tensor({2, 1, 6, 6}, 24));
}

TEST(TapeGradient, CaptureLogitsMatchPlainForward) {
  const Network net = testing::toy_network(4, true);
  const Tensor x = random_tensor({3, 1, 6, 6}, 25);
  Capture cap = forward_capture(net, x, true);
  EXPECT_EQ(cap.tape.value(cap.logits), forward(net, x));
}

TEST(Tape, ErrorsOnNonScalarUnreachableAndEmpty) {
  Tape<double> t;
  Var x = t.input(random_tensor({2}, 1));
  EXPECT_THROW(t.backprop_to_input(x, x), Error);  // empty tape
  Var y = ad::relu(t, x);
  EXPECT_THROW(t.backprop_to_input(y, x), Error);  // not a scalar
  Var other = t.input(random_tensor({2}, 2));
  Var loss = ad::sum(t, other);
  EXPECT_THROW(t.backprop_to_input(loss, x), Error);  // does not depend on x
  Tape<double> u;
  EXPECT_THROW(u.value(loss), Error);  // foreign variable
}

TEST(Tape, FanOutAccumulates) {
  Tape<double> t;
  Var x = t.input(Tensor({2}, {1.5, -2}));
  Var y = ad::add(t, ad::add(t, x, x), x);
  EXPECT_EQ(t.backprop_to_input(ad::sum(t, y), x), Tensor::constant({2}, 3.0));
}

TEST(Tape, SurvivesMoveAndReplaysDeterministically) {
  const Network net = testing::toy_network(5);
  const Tensor x = random_tensor({2, 1, 6, 6}, 26);
  auto grad = [&] {
    Capture cap = forward_capture(net, x, true);
    Capture moved = std::move(cap);
    auto [m, s] = std::pair{moved.bn_mean[1], moved.bn_std[1]};
    Var loss = ad::add(moved.tape, project(moved.tape, m), project(moved.tape, s));
    return moved.tape.backprop_to_input(loss, moved.input);
  };
  const Tensor a = grad(), b = grad();
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.all_finite());
}

}  // namespace
}  // namespace dsg
