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
#include "dsg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dsg/binary_io.hpp"

namespace dsg {

namespace {

// Population std of column c over the rows of a [B,C] tensor, shifted by the first row.
double column_std(const Tensor& t, Index c) {
  const Index rows = t.dim(0);
  const double shift = t.at(0, c);
  double sum = 0;
  for (Index k = 0; k < rows; ++k) sum += t.at(k, c) - shift;
  const double mean = shift + sum / double(rows);
  double sq = 0;
  for (Index k = 0; k < rows; ++k) sq += (t.at(k, c) - mean) * (t.at(k, c) - mean);
  return std::sqrt(sq / double(rows));
}

}  // namespace

DispersionReport dispersion(const FeatureStats& stats, const BnStats& bn) {
  if (!stats.per_sample) throw_invalid("dispersion: per-sample statistics required");
  if (stats.samples() < 2) throw_invalid("dispersion: at least two samples required");
  if (stats.layers() != bn.layers()) throw_invalid("dispersion: BN layer count mismatch");
  DispersionReport r;
  const Index samples = stats.samples();
  for (std::size_t i = 0; i < bn.layers(); ++i) {
    const Tensor& m = stats.mean[i];
    const Tensor& s = stats.std[i];
    const Index channels = m.dim(1);
    if (channels != bn.mu[i].size()) throw_invalid("dispersion: channel count mismatch");
    Tensor md({channels}), sd({channels}), mo({channels}), so({channels});
    for (Index c = 0; c < channels; ++c) {
      md[c] = column_std(m, c);
      sd[c] = column_std(s, c);
      double mean_sum = 0, within = 0;
      for (Index k = 0; k < samples; ++k) {
        mean_sum += m.at(k, c);
        within += s.at(k, c) * s.at(k, c);
      }
      const double batch_mean = mean_sum / double(samples);
      // Pooled variance: mean within-sample variance plus variance of the means.
      const double batch_std = std::sqrt(within / double(samples) + md[c] * md[c]);
      mo[c] = std::abs(batch_mean - bn.mu[i][c]);
      so[c] = std::abs(batch_std - bn.sigma[i][c]);
    }
    r.mean_dispersion.push_back(std::move(md));
    r.std_dispersion.push_back(std::move(sd));
    r.mean_offset.push_back(std::move(mo));
    r.std_offset.push_back(std::move(so));
  }
  return r;
}

double median(std::vector<double> values) {
  if (values.empty()) throw_invalid("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

DispersionRatios compare_dispersion(const DispersionReport& a, const DispersionReport& b) {
  if (a.layers() != b.layers()) throw_invalid("compare_dispersion: layer count mismatch");
  DispersionRatios out;
  auto field = [&](const std::vector<Tensor>& x, const std::vector<Tensor>& y, std::vector<double>& dst) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].shape() != y[i].shape()) throw_invalid("compare_dispersion: channel count mismatch");
      std::vector<double> ratios(std::size_t(x[i].size()));
      for (Index c = 0; c < x[i].size(); ++c) ratios[std::size_t(c)] = x[i][c] / std::max(y[i][c], kRatioFloor);
      dst.push_back(median(std::move(ratios)));
    }
  };
  field(a.mean_dispersion, b.mean_dispersion, out.mean_dispersion);
  field(a.std_dispersion, b.std_dispersion, out.std_dispersion);
  field(a.mean_offset, b.mean_offset, out.mean_offset);
  field(a.std_offset, b.std_offset, out.std_offset);
  return out;
}

std::string dispersion_csv(const DispersionReport& r) {
  std::ostringstream os;
  os << "layer,channel,mean_dispersion,std_dispersion,mean_offset,std_offset\n";
  for (std::size_t i = 0; i < r.layers(); ++i) {
    for (Index c = 0; c < r.mean_dispersion[i].size(); ++c) {
      os << i << ',' << c << ',' << format_real(r.mean_dispersion[i][c]) << ','
         << format_real(r.std_dispersion[i][c]) << ',' << format_real(r.mean_offset[i][c]) << ','
         << format_real(r.std_offset[i][c]) << '\n';
    }
  }
  return os.str();
}

std::string ratios_csv(const DispersionRatios& r) {
  std::ostringstream os;
  os << "layer,mean_dispersion,std_dispersion,mean_offset,std_offset\n";
  for (std::size_t i = 0; i < r.mean_dispersion.size(); ++i) {
    os << i << ',' << format_real(r.mean_dispersion[i]) << ',' << format_real(r.std_dispersion[i]) << ','
       << format_real(r.mean_offset[i]) << ',' << format_real(r.std_offset[i]) << '\n';
  }
  return os.str();
}

void export_histogram(const Tensor& activation, Index channel, double mu, double sigma,
                      const std::filesystem::path& path) {
  if (activation.rank() != 4) throw_invalid("export_histogram: activation must be [B,C,H,W]");
  if (channel < 0 || channel >= activation.dim(1)) throw_invalid("export_histogram: channel out of range");
  std::ostringstream os;
  os << "sample_id,value\n";
  const Index plane = activation.dim(2) * activation.dim(3);
  for (Index b = 0; b < activation.dim(0); ++b) {
    const Index base = (b * activation.dim(1) + channel) * plane;
    for (Index p = 0; p < plane; ++p) os << b << ',' << format_real(activation[base + p]) << '\n';
  }
  write_file_atomic(path, os.str());
  std::filesystem::path side = path;
  side += ".bn.csv";
  write_file_atomic(side, "mu,sigma\n" + format_real(mu) + "," + format_real(sigma) + "\n");
}

void export_bn_histogram(const Network& net, const Tensor& batch, std::size_t layer, Index channel,
                         const std::filesystem::path& path) {
  const BnStats bn = extract_bn_stats(net);
  if (layer >= bn.layers()) throw_invalid("export_bn_histogram: BN layer index out of range");
  if (channel < 0 || channel >= bn.mu[layer].size()) throw_invalid("export_bn_histogram: channel out of range");
  const auto inputs = bn_inputs(net, batch);
  export_histogram(inputs[layer], channel, bn.mu[layer][channel], bn.sigma[layer][channel], path);
}

}  // namespace dsg
