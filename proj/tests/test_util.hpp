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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "dsg/network.hpp"
#include "dsg/random.hpp"
#include "dsg/tape.hpp"

namespace dsg::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Records a scalar loss for input x on a fresh tape.
using LossBuilder = std::function<Var(Tape<double>&, Var)>;

inline double eval_loss(const LossBuilder& build, const Tensor& x) {
  Tape<double> t;
  Var in = t.input(x);
  return t.value(build(t, in))[0];
}

struct GradCheck {
  double worst_rel = 0.0;  // over elements compared relatively
  double worst_abs = 0.0;  // over elements compared absolutely
  bool ok = true;
};

/// Central differences with step h against an analytic gradient. Elements
/// whose analytic value is below 1e-8 in magnitude are compared absolutely.
inline GradCheck compare_gradient(const std::function<double(const Tensor&)>& value, const Tensor& analytic,
                                  const Tensor& x, double h = 1e-5, double rel_tol = 1e-5, double abs_tol = 1e-8) {
  GradCheck r;
  Tensor xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = value(xp);
    xp[i] = x[i] - h;
    const double fm = value(xp);
    xp[i] = x[i];
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic[i];
    const double diff = std::abs(a - numeric);
    if (std::abs(a) < 1e-8) {
      r.worst_abs = std::max(r.worst_abs, diff);
      r.ok = r.ok && diff <= abs_tol;
    } else {
      const double rel = diff / std::max(std::abs(a), std::abs(numeric));
      r.worst_rel = std::max(r.worst_rel, rel);
      r.ok = r.ok && rel <= rel_tol;
    }
  }
  return r;
}

inline GradCheck check_gradient(const LossBuilder& build, const Tensor& x, double h = 1e-5) {
  Tape<double> t;
  Var in = t.input(x);
  const Tensor analytic = t.backprop_to_input(build(t, in), in);
  return compare_gradient([&](const Tensor& v) { return eval_loss(build, v); }, analytic, x, h);
}

/// Scalar projection sum(w * y) with fixed pseudo-random weights, so every
/// output element reaches the loss with a distinct coefficient.
inline Var project(Tape<double>& t, Var y, std::uint64_t seed = 99) {
  const Tensor w = random_tensor(t.value(y).shape(), seed, 0.5, 1.5);
  return ad::weighted_sum(t, y, w, 1.0);
}

/// Small conv net with two BN layers (three with `residual`), random
/// weights and positive running statistics. Input 1x6x6, three classes.
inline Network toy_network(std::uint64_t seed, bool residual = false) {
  Rng rng(seed);
  auto rand = [&](const Shape& s, double lo, double hi) {
    Tensor t(s);
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
  };
  auto conv = [&](Index out, Index in) {
    Layer l;
    l.kind = LayerKind::kConv;
    l.pad = 1;
    l.weight = rand({out, in, 3, 3}, -0.6, 0.6);
    l.bias = rand({out}, -0.2, 0.2);
    return l;
  };
  auto bn = [&](Index c) {
    Layer l;
    l.kind = LayerKind::kBatchNorm;
    l.gamma = rand({c}, 0.5, 1.5);
    l.beta = rand({c}, -0.3, 0.3);
    l.running_mean = rand({c}, -0.5, 0.5);
    l.running_var = rand({c}, 0.2, 2.0);
    return l;
  };
  auto plain = [](LayerKind k) {
    Layer l;
    l.kind = k;
    return l;
  };
  Network net;
  net.arch = residual ? "toy-res" : "toy";
  net.input_shape = {1, 6, 6};
  net.classes = 3;
  net.layers = {conv(3, 1), bn(3), plain(LayerKind::kRelu)};
  if (residual) {
    net.layers.push_back(plain(LayerKind::kResidualBegin));
    net.layers.push_back(conv(3, 3));
    net.layers.push_back(bn(3));
    net.layers.push_back(plain(LayerKind::kRelu));
    net.layers.push_back(plain(LayerKind::kResidualAdd));
  }
  Layer pool = plain(LayerKind::kMaxPool);
  pool.kernel = 2;
  pool.stride = 2;
  net.layers.push_back(pool);
  net.layers.push_back(conv(4, 3));
  net.layers.push_back(bn(4));
  net.layers.push_back(plain(LayerKind::kRelu));
  net.layers.push_back(plain(LayerKind::kGlobalAvgPool));
  Layer fc = plain(LayerKind::kDense);
  fc.weight = rand({3, 4}, -1, 1);
  fc.bias = rand({3}, -0.1, 0.1);
  net.layers.push_back(fc);
  validate(net);
  return net;
}

}  // namespace dsg::testing
