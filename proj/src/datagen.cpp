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
#include "dsg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dsg/binary_io.hpp"
#include "dsg/random.hpp"

namespace dsg {

std::string_view to_string(GenMode mode) {
  switch (mode) {
    case GenMode::kVanilla:
      return "vanilla";
    case GenMode::kSda:
      return "sda";
    case GenMode::kLse:
      return "lse";
    case GenMode::kDsg:
      return "dsg";
  }
  return "unknown";
}

GenMode parse_gen_mode(std::string_view name) {
  for (GenMode m : {GenMode::kVanilla, GenMode::kSda, GenMode::kLse, GenMode::kDsg}) {
    if (to_string(m) == name) return m;
  }
  throw_invalid("unknown generation mode '" + std::string(name) + "'");
}

namespace {

Tensor gaussian(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

void check_layers(const FeatureStats& stats, const BnStats& bn, const char* where) {
  if (stats.layers() != bn.layers()) throw_invalid(std::string(where) + ": BN layer count mismatch");
  for (std::size_t i = 0; i < bn.layers(); ++i) {
    if (stats.mean[i].dim(1) != bn.mu[i].size()) throw_invalid(std::string(where) + ": channel count mismatch");
  }
}

/// Sum over channels of the squared hinge excess of |stat - target| over margin, per row.
Var hinge_square_rows(Tape<double>& t, Var stat, const Tensor& target, const Tensor& margin) {
  Var gap = ad::abs(t, ad::sub_row(t, stat, target));
  Var excess = ad::relu(t, ad::sub_row(t, gap, margin));
  return ad::row_sum(t, ad::square(t, excess));
}

struct Adam {
  Adam(const Shape& shape, const GenConfig& cfg) : m(shape), v(shape), cfg(cfg) {}

  void step(Tensor& x, const Tensor& grad) {
    ++t;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    m.array() = b1 * m.array() + (1.0 - b1) * grad.array();
    v.array() = b2 * v.array() + (1.0 - b2) * grad.array().square();
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    x.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
  }

  Tensor m, v;
  const GenConfig& cfg;
  int t = 0;
};

}  // namespace

Tensor init_gaussian(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian(shape, rng);
}

double percentile(std::span<const double> values, double eps) {
  if (values.empty()) throw_invalid("percentile: empty input");
  if (!(eps >= 0.0 && eps <= 1.0)) throw_invalid("percentile: eps must lie in [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (eps == 1.0) return sorted.back();
  const double rank = eps * double(sorted.size() - 1);
  const auto lo = std::size_t(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (rank - double(lo)) * (sorted[hi] - sorted[lo]);
}

SlackMargins zero_margins(const BnStats& bn) {
  SlackMargins m;
  for (std::size_t i = 0; i < bn.layers(); ++i) {
    m.delta.push_back(Tensor(bn.mu[i].shape()));
    m.gamma.push_back(Tensor(bn.mu[i].shape()));
  }
  return m;
}

SlackMargins compute_margins(const FeatureStats& probe, const BnStats& bn, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw_invalid("compute_margins: eps must lie in [0, 1]");
  check_layers(probe, bn, "compute_margins");
  SlackMargins m = zero_margins(bn);
  if (eps == 0.0) return m;
  if (!probe.per_sample) throw_invalid("compute_margins: probe statistics must be per sample");
  const Index samples = probe.samples();
  std::vector<double> mean_gaps(static_cast<std::size_t>(samples)), std_gaps(static_cast<std::size_t>(samples));
  for (std::size_t i = 0; i < bn.layers(); ++i) {
    for (Index c = 0; c < bn.mu[i].size(); ++c) {
      for (Index k = 0; k < samples; ++k) {
        mean_gaps[std::size_t(k)] = std::abs(probe.mean[i].at(k, c) - bn.mu[i][c]);
        std_gaps[std::size_t(k)] = std::abs(probe.std[i].at(k, c) - bn.sigma[i][c]);
      }
      m.delta[i][c] = percentile(mean_gaps, eps);
      m.gamma[i][c] = percentile(std_gaps, eps);
    }
  }
  return m;
}

double sda_sample_layer_loss(std::span<const double> mu_t, std::span<const double> sigma_t, const Tensor& mu,
                             const Tensor& sigma, const Tensor& delta, const Tensor& gamma) {
  const auto channels = std::size_t(mu.size());
  if (mu_t.size() != channels || sigma_t.size() != channels || std::size_t(sigma.size()) != channels ||
      std::size_t(delta.size()) != channels || std::size_t(gamma.size()) != channels) {
    throw_invalid("sda_sample_layer_loss: channel count mismatch");
  }
  double loss = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double dm = std::max(std::abs(mu_t[c] - mu[Index(c)]) - delta[Index(c)], 0.0);
    const double ds = std::max(std::abs(sigma_t[c] - sigma[Index(c)]) - gamma[Index(c)], 0.0);
    loss += dm * dm + ds * ds;
  }
  return loss;
}

Tensor lse_weights(Index batch, Index layers) {
  if (batch < 1 || layers < 1) throw_invalid("lse_weights: batch and layer count must be >= 1");
  Tensor w = Tensor::constant({batch, layers}, 1.0);
  for (Index k = 0; k < batch; ++k) w.at(k, k % layers) += 1.0;
  return w;
}

Tensor uniform_weights(Index batch, Index layers) {
  if (batch < 1 || layers < 1) throw_invalid("uniform_weights: batch and layer count must be >= 1");
  return Tensor::constant({batch, layers}, 1.0);
}

LossBreakdown dsg_loss(const Tensor& per_sample_layer, const Tensor& weights) {
  if (per_sample_layer.rank() != 2 || per_sample_layer.shape() != weights.shape()) {
    throw_invalid("dsg_loss: loss matrix and weights must share one [B,N] shape");
  }
  const Index batch = per_sample_layer.dim(0), layers = per_sample_layer.dim(1);
  LossBreakdown out{per_sample_layer, Tensor({batch}), 0.0};
  double sum = 0;
  for (Index k = 0; k < batch; ++k) {
    double row = 0;
    for (Index i = 0; i < layers; ++i) row += weights.at(k, i) * per_sample_layer.at(k, i);
    out.per_sample_total[k] = row;
    sum += row;
  }
  out.total = sum / double(batch * layers);
  return out;
}

std::pair<Var, Var> record_dsg_objective(Capture& capture, const BnStats& bn, const SlackMargins& margins,
                                         const Tensor& weights) {
  check_layers(capture.stats, bn, "record_dsg_objective");
  if (margins.delta.size() != bn.layers() || margins.gamma.size() != bn.layers()) {
    throw_invalid("record_dsg_objective: margin layer count mismatch");
  }
  auto& t = capture.tape;
  std::vector<Var> columns;
  for (std::size_t i = 0; i < bn.layers(); ++i) {
    Var mean_term = hinge_square_rows(t, capture.bn_mean[i], bn.mu[i], margins.delta[i]);
    Var std_term = hinge_square_rows(t, capture.bn_std[i], bn.sigma[i], margins.gamma[i]);
    columns.push_back(ad::add(t, mean_term, std_term));
  }
  Var per_sample_layer = ad::stack_columns(t, columns);
  const auto& value = t.value(per_sample_layer);
  if (value.shape() != weights.shape()) throw_invalid("record_dsg_objective: weights must be [B,N]");
  Var total = ad::weighted_sum(t, per_sample_layer, weights, 1.0 / double(value.size()));
  return {per_sample_layer, total};
}

Objective evaluate_objective(const Network& net, const Tensor& batch, const BnStats& bn,
                             const SlackMargins& margins, const Tensor& weights) {
  Capture cap = forward_capture(net, batch, true);
  auto [per_sample_layer, total] = record_dsg_objective(cap, bn, margins, weights);
  Objective obj{dsg_loss(cap.tape.value(per_sample_layer), weights), {}};
  obj.loss.total = cap.tape.value(total)[0];
  obj.gradient = cap.tape.backprop_to_input(total, cap.input);
  return obj;
}

GenResult generate(const Network& net, const GenConfig& cfg) {
  validate(net);
  if (cfg.iterations < 0) throw_invalid("generate: iterations must be >= 0");
  if (!(cfg.learning_rate > 0)) throw_invalid("generate: learning rate must be positive");
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0)) throw_invalid("generate: epsilon must lie in [0, 1]");
  if (cfg.batch_size < 0) throw_invalid("generate: batch size must be >= 0");
  const Index layers = Index(net.bn_count());
  const Index batch = cfg.batch_size > 0 ? cfg.batch_size : layers;

  Rng rng(cfg.seed);
  const Shape shape{batch, net.input_shape[0], net.input_shape[1], net.input_shape[2]};
  GenResult r;
  r.batch = gaussian(shape, rng);
  const BnStats bn = extract_bn_stats(net);
  if (cfg.uses_margins()) {
    if (cfg.probe_count < 1) throw_invalid("generate: probe count must be >= 1");
    const Tensor probe = gaussian({cfg.probe_count, shape[1], shape[2], shape[3]}, rng);
    r.margins = compute_margins(feature_stats(net, probe, true), bn, cfg.epsilon);
  } else {
    r.margins = zero_margins(bn);
  }
  r.weights = cfg.uses_enhancement() ? lse_weights(batch, layers) : uniform_weights(batch, layers);

  Adam adam(shape, cfg);
  for (int it = 1; it <= cfg.iterations; ++it) {
    Objective obj;
    try {
      obj = evaluate_objective(net, r.batch, bn, r.margins, r.weights);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumerical) throw;
      throw_numerical("generate: iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(obj.loss.total)) throw_numerical("generate: non-finite loss at iteration " + std::to_string(it));
    r.history.push_back(std::move(obj.loss));
    adam.step(r.batch, obj.gradient);
  }
  require_finite(r.batch, "generate");
  return r;
}

void save_generation(const GenResult& result, const std::filesystem::path& dir) {
  save_raw(Dataset{result.batch, {}}, dir);
  std::ostringstream log;
  log << "iter,total_loss\n";
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    log << (i + 1) << ',' << format_real(result.history[i].total) << '\n';
  }
  write_file_atomic(dir / "gen.log", log.str());
}

}  // namespace dsg
