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
#include "dsg/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "dsg/binary_io.hpp"
#include "dsg/datagen.hpp"

namespace dsg {

namespace {

void check_bits(int bits) {
  if (bits < 2 || bits > 8) throw_invalid("quantizer bit-width must lie in [2, 8], got " + std::to_string(bits));
}

std::span<const double> as_span(const Tensor& t) { return {t.data(), std::size_t(t.size())}; }

std::pair<double, double> extremes(std::span<const double> values) {
  if (values.empty()) throw_invalid("cannot fit a quantizer to no values");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {*lo, *hi};
}

std::string layer_name(const Network& net, std::size_t layer) {
  return "L" + std::to_string(layer) + "." + std::string(to_string(net.layers[layer].kind));
}

}  // namespace

void check_params(const QuantParams& p) {
  check_bits(p.bits);
  if (!(p.scale > 0.0) || !std::isfinite(p.scale)) throw_invalid("quantizer scale must be positive and finite");
  if (p.zero_point < p.qmin() || p.zero_point > p.qmax()) throw_invalid("quantizer zero point out of range");
}

double round_half_away(double x) { return std::round(x); }

double fake_quant(double x, const QuantParams& p) {
  const double q = std::clamp(round_half_away(x / p.scale) + double(p.zero_point), double(p.qmin()), double(p.qmax()));
  return (q - double(p.zero_point)) * p.scale;
}

Tensor fake_quant(const Tensor& x, const QuantParams& p) {
  check_params(p);
  Tensor out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = fake_quant(x[i], p);
  return out;
}

QuantParams fit_range(double lo, double hi, int bits) {
  check_bits(bits);
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) throw_invalid("fit_range: invalid range");
  QuantParams p{bits, kDegenerateScale, 0};
  if (hi == lo) return p;
  p.scale = (hi - lo) / double(p.qmax() - p.qmin());
  p.zero_point = std::clamp(std::int64_t(round_half_away(-lo / p.scale)), p.qmin(), p.qmax());
  return p;
}

QuantParams fit_minmax(std::span<const double> values, int bits) {
  const auto [lo, hi] = extremes(values);
  return fit_range(lo, hi, bits);
}

QuantParams fit_percentile(std::span<const double> values, int bits, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw_invalid("fit_percentile: p must lie in (0, 1]");
  if (values.empty()) throw_invalid("cannot fit a quantizer to no values");
  const double hi = percentile(values, p);
  const double lo = percentile(values, 1.0 - p);
  return fit_range(std::min(lo, hi), std::max(lo, hi), bits);
}

QuantParams fit_ema(const std::vector<std::vector<double>>& batches, int bits, double momentum) {
  if (batches.empty()) throw_invalid("fit_ema: no batches");
  if (!(momentum > 0.0 && momentum < 1.0)) throw_invalid("fit_ema: momentum must lie in (0, 1)");
  auto [lo, hi] = extremes(batches.front());
  for (std::size_t b = 1; b < batches.size(); ++b) {
    const auto [blo, bhi] = extremes(batches[b]);
    lo = momentum * lo + (1.0 - momentum) * blo;
    hi = momentum * hi + (1.0 - momentum) * bhi;
  }
  return fit_range(lo, hi, bits);
}

double quant_sse(std::span<const double> values, const QuantParams& p) {
  double sse = 0;
  for (double x : values) {
    const double e = x - fake_quant(x, p);
    sse += e * e;
  }
  return sse;
}

QuantParams fit_mse(std::span<const double> values, int bits, int grid_points) {
  if (grid_points < 1) throw_invalid("fit_mse: grid_points must be >= 1");
  const auto [lo, hi] = extremes(values);
  if (lo == hi) return fit_range(lo, hi, bits);
  QuantParams best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int j = 0; j < grid_points; ++j) {
    const double c = (grid_points == 1 || j == grid_points - 1) ? 1.0 : 0.1 + 0.9 * double(j) / (grid_points - 1);
    const QuantParams p = fit_range(c * lo, c * hi, bits);
    const double sse = quant_sse(values, p);
    if (sse <= best_sse) {
      best_sse = sse;
      best = p;
    }
  }
  return best;
}

std::string Calibrator::name() const {
  switch (kind) {
    case Kind::kMinMax:
      return "vanilla";
    case Kind::kPercentile:
      return "percentile";
    case Kind::kEma:
      return "ema";
    case Kind::kMse:
      return "mse";
  }
  return "unknown";
}

Calibrator Calibrator::parse(std::string_view name) {
  Calibrator c;
  if (name == "vanilla" || name == "minmax") {
    c.kind = Kind::kMinMax;
  } else if (name == "percentile") {
    c.kind = Kind::kPercentile;
  } else if (name == "ema") {
    c.kind = Kind::kEma;
  } else if (name == "mse") {
    c.kind = Kind::kMse;
  } else {
    throw_invalid("unknown calibrator '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::size_t> activation_sites(const Network& net) {
  std::vector<std::size_t> sites;
  const auto& L = net.layers;
  for (std::size_t i = 0; i < L.size(); ++i) {
    switch (L[i].kind) {
      case LayerKind::kConv:
      case LayerKind::kDense:
      case LayerKind::kResidualAdd:
      case LayerKind::kMaxPool:
      case LayerKind::kGlobalAvgPool: {
        std::size_t j = i;
        while (j + 1 < L.size() && (L[j + 1].kind == LayerKind::kBatchNorm || L[j + 1].kind == LayerKind::kRelu)) ++j;
        sites.push_back(j);
        break;
      }
      default:
        break;
    }
  }
  return sites;
}

QuantizedNetwork quantize_weights(const Network& net, std::optional<int> bits) {
  validate(net);
  QuantizedNetwork q;
  q.net = net;
  q.weight_bits = bits;
  q.site_layers = activation_sites(net);
  q.site_params.assign(q.site_layers.size(), std::nullopt);
  if (!bits) return q;
  check_bits(*bits);
  for (std::size_t i = 0; i < q.net.layers.size(); ++i) {
    Layer& l = q.net.layers[i];
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kDense) continue;
    const QuantParams p = fit_minmax(as_span(l.weight), *bits);
    l.weight = fake_quant(l.weight, p);
    q.weight_layers.push_back(i);
    q.weight_params.push_back(p);
  }
  return q;
}

QuantizedNetwork calibrate_activations(QuantizedNetwork qnet, const Tensor& calib, const Calibrator& kind,
                                       std::optional<int> bits) {
  qnet.activation_bits = bits;
  qnet.calibrator = kind.name();
  qnet.site_params.assign(qnet.site_layers.size(), std::nullopt);
  if (!bits) return qnet;
  check_bits(*bits);
  const Shape& in = qnet.net.input_shape;
  if (calib.rank() != 4 || calib.dim(1) != in[0] || calib.dim(2) != in[1] || calib.dim(3) != in[2]) {
    throw_invalid("calibrate_activations: calibration batch " + shape_string(calib.shape()) +
                  " does not match the network input");
  }
  std::map<std::size_t, std::size_t> site_of;
  for (std::size_t s = 0; s < qnet.site_layers.size(); ++s) site_of[qnet.site_layers[s]] = s;

  // values[site][chunk] holds the flattened site activations of one sub-batch.
  std::vector<std::vector<std::vector<double>>> values(qnet.site_layers.size());
  const Index chunk = kind.kind == Calibrator::Kind::kEma ? std::max<Index>(1, kind.ema_sub_batch) : calib.dim(0);
  for (Index begin = 0; begin < calib.dim(0); begin += chunk) {
    const Tensor part = calib.slice_batch(begin, std::min(calib.dim(0), begin + chunk));
    forward(qnet.net, part, [&](std::size_t layer, Tensor& act) {
      auto it = site_of.find(layer);
      if (it != site_of.end()) values[it->second].emplace_back(act.data(), act.data() + act.size());
    });
  }
  for (std::size_t s = 0; s < values.size(); ++s) {
    switch (kind.kind) {
      case Calibrator::Kind::kMinMax:
        qnet.site_params[s] = fit_minmax(values[s].front(), *bits);
        break;
      case Calibrator::Kind::kPercentile:
        qnet.site_params[s] = fit_percentile(values[s].front(), *bits, kind.percentile);
        break;
      case Calibrator::Kind::kEma:
        qnet.site_params[s] = fit_ema(values[s], *bits, kind.momentum);
        break;
      case Calibrator::Kind::kMse:
        qnet.site_params[s] = fit_mse(values[s].front(), *bits, kind.grid_points);
        break;
    }
  }
  return qnet;
}

Tensor forward_quantized(const QuantizedNetwork& qnet, const Tensor& batch) {
  if (!qnet.activation_bits) return forward(qnet.net, batch);
  std::map<std::size_t, const QuantParams*> params;
  for (std::size_t s = 0; s < qnet.site_layers.size(); ++s) {
    if (!qnet.site_params[s]) {
      throw_invalid("forward_quantized: activation site at layer " + std::to_string(qnet.site_layers[s]) +
                    " is not calibrated");
    }
    params[qnet.site_layers[s]] = &*qnet.site_params[s];
  }
  return forward(qnet.net, batch, [&](std::size_t layer, Tensor& act) {
    auto it = params.find(layer);
    if (it != params.end()) act = fake_quant(act, *it->second);
  });
}

double eval_quantized(const QuantizedNetwork& qnet, const Dataset& data, int threads) {
  for (std::int32_t l : data.labels) {
    if (l < 0 || l >= qnet.net.classes) throw_invalid("eval_quantized: label out of range");
  }
  return evaluate_with([&qnet](const Tensor& x) { return forward_quantized(qnet, x); }, data, threads);
}

std::string calibration_report(const QuantizedNetwork& qnet) {
  std::ostringstream os;
  os << "site,kind,bits,scale,zero_point,range_lo,range_hi\n";
  auto row = [&](const std::string& site, const std::string& kind, const QuantParams& p) {
    os << site << ',' << kind << ',' << p.bits << ',' << format_real(p.scale) << ',' << p.zero_point << ','
       << format_real(p.lo()) << ',' << format_real(p.hi()) << '\n';
  };
  for (std::size_t w = 0; w < qnet.weight_layers.size(); ++w) {
    row("weight." + layer_name(qnet.net, qnet.weight_layers[w]), "vanilla", qnet.weight_params[w]);
  }
  for (std::size_t s = 0; s < qnet.site_layers.size(); ++s) {
    if (qnet.site_params[s]) row("act." + layer_name(qnet.net, qnet.site_layers[s]), qnet.calibrator, *qnet.site_params[s]);
  }
  return os.str();
}

}  // namespace dsg
