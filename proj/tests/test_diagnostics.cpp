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

#include <fstream>
#include <sstream>

#include "dsg/binary_io.hpp"
#include "dsg/diagnostics.hpp"
#include "temp_dir.hpp"
#include "test_util.hpp"

namespace dsg {
namespace {

using testing::random_tensor;

FeatureStats stats_from(const Tensor& mean, const Tensor& std) {
  FeatureStats s;
  s.per_sample = true;
  s.mean.push_back(mean);
  s.std.push_back(std);
  return s;
}

BnStats bn_of(std::initializer_list<double> mu, std::initializer_list<double> sigma) {
  BnStats bn;
  bn.mu.push_back(Tensor::from_vector({Index(mu.size())}, std::vector<double>(mu)));
  bn.sigma.push_back(Tensor::from_vector({Index(sigma.size())}, std::vector<double>(sigma)));
  return bn;
}

TEST(Dispersion, IdenticalSamplesGiveZero) {
  const Tensor m({4, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
  const Tensor s({4, 2}, {0.5, 3, 0.5, 3, 0.5, 3, 0.5, 3});
  const DispersionReport r = dispersion(stats_from(m, s), bn_of({1, 0}, {0.5, 3}));
  EXPECT_EQ(r.mean_dispersion[0][0], 0.0);
  EXPECT_EQ(r.mean_dispersion[0][1], 0.0);
  EXPECT_EQ(r.std_dispersion[0][0], 0.0);
  EXPECT_EQ(r.mean_offset[0][0], 0.0);
  EXPECT_EQ(r.mean_offset[0][1], 2.0);
  EXPECT_EQ(r.std_offset[0][0], 0.0);
}

TEST(Dispersion, TwoMeansHandValue) {
  const Tensor m({2, 1}, {1, 3});
  const Tensor s({2, 1}, {0, 0});
  const DispersionReport r = dispersion(stats_from(m, s), bn_of({2}, {1}));
  EXPECT_EQ(r.mean_dispersion[0][0], 1.0);
  EXPECT_EQ(r.mean_offset[0][0], 0.0);
  // Pooled std of the values {1, 3} is 1.
  EXPECT_EQ(r.std_offset[0][0], 0.0);
}

TEST(Dispersion, PooledStdMatchesConcatenatedData) {
  const Network net = testing::toy_network(3);
  const Tensor x = random_tensor({6, 1, 6, 6}, 4);
  const FeatureStats per = feature_stats(net, x, true);
  const FeatureStats batch = feature_stats(net, x, false);
  const BnStats bn = extract_bn_stats(net);
  const DispersionReport r = dispersion(per, bn);
  for (std::size_t i = 0; i < bn.layers(); ++i) {
    for (Index c = 0; c < bn.mu[i].size(); ++c) {
      EXPECT_NEAR(r.mean_offset[i][c], std::abs(batch.mean[i][c] - bn.mu[i][c]), 1e-12);
      EXPECT_NEAR(r.std_offset[i][c], std::abs(batch.std[i][c] - bn.sigma[i][c]), 1e-12);
    }
  }
}

TEST(Dispersion, InvariantToSampleOrder) {
  const Tensor m = random_tensor({7, 3}, 1);
  const Tensor s = random_tensor({7, 3}, 2, 0.1, 2);
  Tensor mr({7, 3}), sr({7, 3});
  for (Index k = 0; k < 7; ++k) {
    for (Index c = 0; c < 3; ++c) {
      mr.at(k, c) = m.at(6 - k, c);
      sr.at(k, c) = s.at(6 - k, c);
    }
  }
  const BnStats bn = bn_of({0, 0.1, -0.2}, {1, 1.5, 0.7});
  const DispersionReport a = dispersion(stats_from(m, s), bn);
  const DispersionReport b = dispersion(stats_from(mr, sr), bn);
  for (Index c = 0; c < 3; ++c) {
    EXPECT_NEAR(a.mean_dispersion[0][c], b.mean_dispersion[0][c], 1e-14);
    EXPECT_NEAR(a.std_dispersion[0][c], b.std_dispersion[0][c], 1e-14);
    EXPECT_NEAR(a.mean_offset[0][c], b.mean_offset[0][c], 1e-14);
    EXPECT_NEAR(a.std_offset[0][c], b.std_offset[0][c], 1e-14);
  }
}

TEST(Dispersion, ScalesWithSpread) {
  const Tensor m = random_tensor({5, 2}, 3);
  const Tensor s = random_tensor({5, 2}, 4, 0.1, 1);
  Tensor m2(m.shape(), 2.0 * m.array());
  const BnStats bn = bn_of({0, 0}, {1, 1});
  const DispersionReport a = dispersion(stats_from(m, s), bn);
  const DispersionReport b = dispersion(stats_from(m2, s), bn);
  for (Index c = 0; c < 2; ++c) EXPECT_NEAR(b.mean_dispersion[0][c], 2.0 * a.mean_dispersion[0][c], 1e-14);
}

TEST(Dispersion, RejectsBadInput) {
  const Tensor one({1, 2});
  EXPECT_THROW(dispersion(stats_from(one, one), bn_of({0, 0}, {1, 1})), Error);
  const Tensor two({2, 2});
  EXPECT_THROW(dispersion(stats_from(two, two), bn_of({0}, {1})), Error);
  FeatureStats pooled = stats_from(two, two);
  pooled.per_sample = false;
  EXPECT_THROW(dispersion(pooled, bn_of({0, 0}, {1, 1})), Error);
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), Error);
}

TEST(Ratios, FloorAndDoubling) {
  DispersionReport a, b;
  for (auto* r : {&a, &b}) {
    r->mean_dispersion.emplace_back(Shape{3});
    r->std_dispersion.emplace_back(Shape{3});
    r->mean_offset.emplace_back(Shape{3});
    r->std_offset.emplace_back(Shape{3});
  }
  for (Index c = 0; c < 3; ++c) {
    b.mean_dispersion[0][c] = 0.5 + double(c);
    a.mean_dispersion[0][c] = 2.0 * b.mean_dispersion[0][c];
    a.std_dispersion[0][c] = 1e-3;
  }
  const DispersionRatios r = compare_dispersion(a, b);
  EXPECT_EQ(r.mean_dispersion[0], 2.0);
  EXPECT_EQ(r.std_dispersion[0], 1e-3 / kRatioFloor);
  EXPECT_EQ(r.mean_offset[0], 0.0);
  std::istringstream csv(ratios_csv(r));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "layer,mean_dispersion,std_dispersion,mean_offset,std_offset");
  std::getline(csv, line);
  EXPECT_EQ(line.substr(0, 4), "0,2,");
}

TEST(DispersionCsv, OneRowPerChannel) {
  const Network net = testing::toy_network(5, true);
  const DispersionReport r = dispersion(feature_stats(net, random_tensor({4, 1, 6, 6}, 6), true),
                                        extract_bn_stats(net));
  std::istringstream csv(dispersion_csv(r));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  Index channels = 0;
  for (const Tensor& t : r.mean_dispersion) channels += t.size();
  EXPECT_EQ(rows, int(channels));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Histogram, RowsSidecarAndReexport) {
  const Network net = testing::toy_network(7);
  const Tensor x = random_tensor({3, 1, 6, 6}, 8);
  const auto dir = testing::temp_dir("hist");
  export_bn_histogram(net, x, 1, 2, dir / "h.csv");
  std::istringstream csv(slurp(dir / "h.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "sample_id,value");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  const Tensor in = bn_inputs(net, x)[1];
  EXPECT_EQ(rows, int(in.dim(0) * in.dim(2) * in.dim(3)));
  const BnStats bn = extract_bn_stats(net);
  EXPECT_EQ(slurp(dir / "h.csv.bn.csv"),
            "mu,sigma\n" + format_real(bn.mu[1][2]) + "," + format_real(bn.sigma[1][2]) + "\n");
  export_bn_histogram(net, x, 1, 2, dir / "h2.csv");
  EXPECT_EQ(slurp(dir / "h.csv"), slurp(dir / "h2.csv"));
  EXPECT_THROW(export_bn_histogram(net, x, 9, 0, dir / "bad.csv"), Error);
  EXPECT_THROW(export_bn_histogram(net, x, 0, 99, dir / "bad.csv"), Error);
}

}  // namespace
}  // namespace dsg
