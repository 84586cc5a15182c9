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

#include <cmath>
#include <sstream>

#include "dsg/datagen.hpp"
#include "dsg/quantize.hpp"
#include "test_util.hpp"

namespace dsg {
namespace {

using testing::random_tensor;

// Nearest grid point by exhaustive scan over every code; ties go to the code
// whose offset from the zero point is larger in magnitude.
double brute_force_fake_quant(double x, int bits, double scale, std::int64_t zp) {
  const double r = x / scale;
  std::int64_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::int64_t q = 0; q < (std::int64_t{1} << bits); ++q) {
    const double n = double(q - zp);
    const double dist = std::abs(r - n);
    if (dist < best_dist || (dist == best_dist && std::abs(n) > std::abs(double(best - zp)))) {
      best = q;
      best_dist = dist;
    }
  }
  return double(best - zp) * scale;
}

std::span<const double> span_of(const Tensor& t) { return {t.data(), std::size_t(t.size())}; }

TEST(FakeQuant, TwoBitHandTrace) {
  const std::vector<double> v{-1.0, 0.5};
  const QuantParams p = fit_minmax(v, 2);
  EXPECT_EQ(p.scale, 0.5);
  EXPECT_EQ(p.zero_point, 2);
  EXPECT_EQ(fake_quant(0.3, p), 0.5);
  EXPECT_EQ(fake_quant(-0.25, p), -0.5);  // -0.5 rounds away from zero to -1
  EXPECT_EQ(fake_quant(0.25, p), 0.5);
  EXPECT_EQ(fake_quant(7.0, p), 0.5);     // clamps to (qmax - zp) * scale
  EXPECT_EQ(fake_quant(-7.0, p), -1.0);
}

TEST(FakeQuant, GridPointsAreFixed) {
  const QuantParams p{8, 0.125, 17};
  for (std::int64_t q = 0; q < 256; ++q) {
    const double x = double(q - 17) * 0.125;
    EXPECT_EQ(fake_quant(x, p), x);
  }
}

TEST(FakeQuant, ScalarOracleBitExact) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const int bits = 2 + int(rng.below(7));
    const std::int64_t qmax = (std::int64_t{1} << bits) - 1;
    const QuantParams p{bits, std::ldexp(rng.uniform(0.5, 1.0), int(rng.below(12)) - 8),
                        std::int64_t(rng.below(std::uint64_t(qmax + 1)))};
    double x;
    if (i % 4 == 0) {
      // Exact half-way points between two codes, in and out of range.
      x = (double(std::int64_t(rng.below(std::uint64_t(qmax + 6)))) - double(p.zero_point) - 3 + 0.5) * p.scale;
    } else {
      x = rng.uniform(-1.3, 1.3) * double(qmax) * p.scale;
    }
    const double got = fake_quant(x, p);
    const double want = brute_force_fake_quant(x, bits, p.scale, p.zero_point);
    ASSERT_EQ(std::bit_cast<std::uint64_t>(got), std::bit_cast<std::uint64_t>(want))
        << "x=" << x << " bits=" << bits << " scale=" << p.scale << " zp=" << p.zero_point;
  }
}

TEST(FakeQuant, IdempotentAndBounded) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const Tensor x = random_tensor({50}, 100 + std::uint64_t(i), -5, 5);
    const int bits = 2 + int(rng.below(7));
    const QuantParams p = fit_minmax(span_of(random_tensor({8}, 500 + std::uint64_t(i), -3, 3)), bits);
    const Tensor once = fake_quant(x, p);
    EXPECT_EQ(fake_quant(once, p), once);
    EXPECT_GE(once.array().minCoeff(), p.lo());
    EXPECT_LE(once.array().maxCoeff(), p.hi());
  }
}

TEST(FakeQuant, RejectsInvalidParams) {
  const Tensor x({2});
  EXPECT_THROW(fake_quant(x, QuantParams{1, 1.0, 0}), Error);
  EXPECT_THROW(fake_quant(x, QuantParams{9, 1.0, 0}), Error);
  EXPECT_THROW(fake_quant(x, QuantParams{8, 0.0, 0}), Error);
  EXPECT_THROW(fake_quant(x, QuantParams{4, 1.0, 16}), Error);
}

TEST(MinMax, Examples) {
  std::vector<double> ints;
  for (int i = 0; i <= 255; ++i) ints.push_back(i);
  const QuantParams p = fit_minmax(ints, 8);
  EXPECT_EQ(p.scale, 1.0);
  EXPECT_EQ(p.zero_point, 0);
  for (double v : ints) EXPECT_EQ(fake_quant(v, p), v);
  EXPECT_EQ(fit_minmax(std::vector<double>{-1, 0.3, 1}, 8).scale, 2.0 / 255.0);
}

TEST(MinMax, ConstantTensorConvention) {
  const QuantParams p = fit_minmax(std::vector<double>{0.7, 0.7, 0.7}, 8);
  EXPECT_EQ(p.scale, kDegenerateScale);
  EXPECT_EQ(p.zero_point, p.qmin());
  EXPECT_LE(std::abs(fake_quant(0.7, p) - 0.7), 0.7);
  EXPECT_THROW(fit_minmax(std::vector<double>{}, 8), Error);
}

TEST(MinMax, ReconstructionWithinHalfStep) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor x = random_tensor({64}, seed, -2, 3);
    const QuantParams p = fit_minmax(span_of(x), 4);
    for (Index i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(fake_quant(x[i], p) - x[i]), 0.5 * p.scale * (1 + 1e-9));
  }
}

TEST(Percentile, EqualsMinMaxAtOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({97}, seed, -4, 2);
    EXPECT_EQ(fit_percentile(span_of(x), 5, 1.0), fit_minmax(span_of(x), 5));
  }
}

TEST(Percentile, InterpolatedEndpoint) {
  std::vector<double> v;
  for (int i = 1; i <= 1000; ++i) v.push_back(i);
  const QuantParams p = fit_percentile(v, 8, 0.999);
  const QuantParams want = fit_range(percentile(v, 0.001), 999.001, 8);
  EXPECT_NEAR(percentile(v, 0.999), 999.001, 1e-9);
  EXPECT_EQ(p, want);
}

TEST(Percentile, SymmetricDataCentersZeroPoint) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Tensor half = random_tensor({40}, seed, 0.01, 3);
    Tensor both = concat_batch(std::vector<Tensor>{half, Tensor(half.shape(), -half.array())});
    const QuantParams p = fit_percentile(span_of(both), 8, 0.9999);
    EXPECT_NEAR(double(p.zero_point), 127.5, 1.0);
  }
}

TEST(Ema, Recurrence) {
  const std::vector<std::vector<double>> one{{-2, 0.5, 1}};
  EXPECT_EQ(fit_ema(one, 8, 0.9), fit_minmax(one[0], 8));
  const std::vector<std::vector<double>> same{{-2, 0.5, 1}, {-2, 0.5, 1}, {-2, 0.5, 1}};
  EXPECT_EQ(fit_ema(same, 8, 0.9), fit_minmax(same[0], 8));
  const std::vector<std::vector<double>> two{{0, 1}, {0, 3}};
  EXPECT_EQ(fit_ema(two, 8, 0.9), fit_range(0.0, 0.9 * 1 + (1 - 0.9) * 3, 8));
  EXPECT_NEAR(fit_ema(two, 8, 0.9).hi(), 1.2, 1e-12);
  EXPECT_THROW(fit_ema({}, 8, 0.9), Error);
}

TEST(Mse, GridAndTies) {
  // Exactly on the MinMax grid (scale 1/8, zero point 100): zero error only at c = 1.
  std::vector<double> grid;
  for (int i = -100; i <= 155; ++i) grid.push_back(i * 0.125);
  EXPECT_EQ(quant_sse(grid, fit_minmax(grid, 8)), 0.0);
  EXPECT_EQ(fit_mse(grid, 8, 100), fit_minmax(grid, 8));
  Tensor g = init_gaussian({500}, 3);
  g[17] = 40.0;
  const QuantParams mse = fit_mse(span_of(g), 4, 100);
  const QuantParams mm = fit_minmax(span_of(g), 4);
  EXPECT_LT(mse.scale, mm.scale);
  EXPECT_LE(quant_sse(span_of(g), mse), quant_sse(span_of(g), mm));
}

TEST(Mse, NeverWorseThanMinMax) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Tensor x = random_tensor({80}, seed, -1, 4);
    const std::span<const double> s = span_of(x);
    EXPECT_LE(quant_sse(s, fit_mse(s, 3, 100)), quant_sse(s, fit_minmax(s, 3)));
  }
}

TEST(QuantizeWeights, IntegerGridIsIdentityAndIdempotent) {
  Network net = testing::toy_network(1);
  Tensor& w = net.layers[0].weight;
  for (Index i = 0; i < w.size(); ++i) w[i] = double(i % 256);
  w[0] = 0;
  w[1] = 255;
  const QuantizedNetwork q = quantize_weights(net, 8);
  EXPECT_EQ(q.net.layers[0].weight, w);
  EXPECT_EQ(q.net.layers[1], net.layers[1]);  // BN untouched
  EXPECT_EQ(q.net.layers[0].bias, net.layers[0].bias);
  const QuantizedNetwork qq = quantize_weights(q.net, 8);
  // Refitting reproduces the grid up to rounding in the recomputed scale.
  for (std::size_t i = 0; i < q.net.layers.size(); ++i) {
    const Tensor& a = qq.net.layers[i].weight;
    const Tensor& b = q.net.layers[i].weight;
    if (!a.empty()) EXPECT_LE((a.array() - b.array()).abs().maxCoeff(), 1e-12 * b.array().abs().maxCoeff());
  }
  EXPECT_EQ(quantize_weights(net, std::nullopt).net, net);
}

TEST(ActivationSites, FollowBlocks) {
  const Network net = build_reference_cnn("cnn5bn", {1, 28, 28}, 10, 0);
  const auto sites = activation_sites(net);
  for (std::size_t s : sites) {
    const LayerKind k = net.layers[s].kind;
    EXPECT_TRUE(k == LayerKind::kRelu || k == LayerKind::kMaxPool || k == LayerKind::kGlobalAvgPool ||
                k == LayerKind::kDense || k == LayerKind::kResidualAdd)
        << to_string(k);
    if (s + 1 < net.layers.size()) EXPECT_NE(net.layers[s + 1].kind, LayerKind::kRelu);
  }
  EXPECT_EQ(sites.back(), net.layers.size() - 1);
  // Three conv blocks, two maxpools, global pool, dense.
  EXPECT_EQ(sites.size(), 7u);
}

TEST(Calibration, MinMaxBoundsObservedValuesAndIsIdempotent) {
  const Network net = testing::toy_network(2, true);
  const Tensor calib = random_tensor({9, 1, 6, 6}, 3, -2, 2);
  const QuantizedNetwork base = quantize_weights(net, 6);
  const QuantizedNetwork a = calibrate_activations(base, calib, Calibrator{}, 6);
  const QuantizedNetwork b = calibrate_activations(a, calib, Calibrator{}, 6);
  EXPECT_EQ(a.site_params, b.site_params);
  std::size_t s = 0;
  forward(base.net, calib, [&](std::size_t layer, Tensor& act) {
    if (s < a.site_layers.size() && a.site_layers[s] == layer) {
      const QuantParams& p = *a.site_params[s];
      EXPECT_EQ(p, fit_minmax(span_of(act), 6));
      ++s;
    }
  });
  EXPECT_EQ(s, a.site_layers.size());
}

TEST(Calibration, PercentileOneMatchesMinMaxSiteForSite) {
  const Network net = testing::toy_network(4);
  const Tensor calib = random_tensor({5, 1, 6, 6}, 5);
  Calibrator pc = Calibrator::parse("percentile");
  pc.percentile = 1.0;
  const auto q = quantize_weights(net, 4);
  EXPECT_EQ(calibrate_activations(q, calib, pc, 4).site_params,
            calibrate_activations(q, calib, Calibrator::parse("vanilla"), 4).site_params);
}

TEST(Calibration, EmaUsesSubBatchesOfEight) {
  const Network net = testing::toy_network(6);
  const Tensor calib = random_tensor({8, 1, 6, 6}, 7);
  const auto q = quantize_weights(net, 8);
  // A single sub-batch degenerates to MinMax.
  EXPECT_EQ(calibrate_activations(q, calib, Calibrator::parse("ema"), 8).site_params,
            calibrate_activations(q, calib, Calibrator::parse("vanilla"), 8).site_params);
  const Tensor twenty = random_tensor({20, 1, 6, 6}, 8);
  const auto ema = calibrate_activations(q, twenty, Calibrator::parse("ema"), 8);
  std::vector<std::vector<double>> parts;
  for (Index b = 0; b < 20; b += 8) {
    forward(q.net, twenty.slice_batch(b, std::min<Index>(20, b + 8)), [&](std::size_t layer, Tensor& act) {
      if (layer == ema.site_layers[0]) parts.emplace_back(act.data(), act.data() + act.size());
    });
  }
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(*ema.site_params[0], fit_ema(parts, 8, 0.9));
}

TEST(Evaluation, FullPrecisionSentinelAndUncalibratedError) {
  const Network net = testing::toy_network(9);
  Dataset d{random_tensor({12, 1, 6, 6}, 10), {}};
  for (int i = 0; i < 12; ++i) d.labels.push_back(i % 3);
  const auto fp = calibrate_activations(quantize_weights(net, std::nullopt), Tensor(), Calibrator{}, std::nullopt);
  EXPECT_EQ(eval_quantized(fp, d), evaluate_accuracy(net, d));
  QuantizedNetwork q = quantize_weights(net, 8);
  q.activation_bits = 8;
  EXPECT_THROW(eval_quantized(q, d), Error);
  const auto c = calibrate_activations(quantize_weights(net, 8), d.images, Calibrator{}, 8);
  EXPECT_EQ(eval_quantized(c, d), eval_quantized(c, d));
  EXPECT_THROW(calibrate_activations(q, random_tensor({2, 1, 5, 5}, 1), Calibrator{}, 8), Error);
}

TEST(Report, CsvRows) {
  const Network net = testing::toy_network(11);
  const auto q = calibrate_activations(quantize_weights(net, 4), random_tensor({3, 1, 6, 6}, 12),
                                       Calibrator::parse("mse"), 4);
  std::istringstream csv(calibration_report(q));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "site,kind,bits,scale,zero_point,range_lo,range_hi");
  int weights = 0, acts = 0;
  while (std::getline(csv, line)) {
    if (line.rfind("weight.", 0) == 0) ++weights;
    if (line.rfind("act.", 0) == 0) {
      ++acts;
      EXPECT_NE(line.find(",mse,4,"), std::string::npos);
    }
  }
  EXPECT_EQ(weights, 3);
  EXPECT_EQ(acts, int(q.site_layers.size()));
}

}  // namespace
}  // namespace dsg
