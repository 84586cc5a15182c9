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
#include "dsg/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <thread>

#include "dsg/ops.hpp"
#include "dsg/random.hpp"

namespace dsg {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 8> kKindNames{{
    {LayerKind::kConv, "conv"},
    {LayerKind::kBatchNorm, "batchnorm"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kMaxPool, "maxpool"},
    {LayerKind::kGlobalAvgPool, "global_avgpool"},
    {LayerKind::kDense, "dense"},
    {LayerKind::kResidualBegin, "residual_begin"},
    {LayerKind::kResidualAdd, "residual_add"},
}};

constexpr Index kEvalChunk = 256;

Tensor bn_sigma(const Layer& l) { return Tensor(l.running_var.shape(), (l.running_var.array() + kBnEpsilon).sqrt()); }

Tensor apply_layer(const Layer& l, const Tensor& x, std::vector<Tensor>& saved) {
  switch (l.kind) {
    case LayerKind::kConv:
      return ops::conv2d(x, l.weight, l.bias, l.stride, l.pad);
    case LayerKind::kBatchNorm:
      return ops::batchnorm_apply(x, l.running_mean, bn_sigma(l), l.gamma, l.beta);
    case LayerKind::kRelu:
      return ops::relu(x);
    case LayerKind::kMaxPool:
      return ops::maxpool2d(x, l.kernel, l.stride).output;
    case LayerKind::kGlobalAvgPool:
      return ops::global_avgpool(x);
    case LayerKind::kDense:
      return ops::dense(x, l.weight, l.bias);
    case LayerKind::kResidualBegin:
      saved.push_back(x);
      return x;
    case LayerKind::kResidualAdd: {
      if (saved.empty()) throw_invalid("residual_add without residual_begin");
      Tensor out = ops::add(x, saved.back());
      saved.pop_back();
      return out;
    }
  }
  throw_invalid("unknown layer kind");
}

Layer conv_layer(Index in_c, Index out_c, Index kernel, Index pad, Rng& rng) {
  Layer l;
  l.kind = LayerKind::kConv;
  l.pad = pad;
  l.weight = Tensor({out_c, in_c, kernel, kernel});
  const double he = std::sqrt(2.0 / double(in_c * kernel * kernel));
  for (Index i = 0; i < l.weight.size(); ++i) l.weight[i] = he * rng.normal();
  l.bias = Tensor({out_c});
  return l;
}

Layer bn_layer(Index c) {
  Layer l;
  l.kind = LayerKind::kBatchNorm;
  l.gamma = Tensor::constant({c}, 1.0);
  l.beta = Tensor({c});
  l.running_mean = Tensor({c});
  l.running_var = Tensor::constant({c}, 1.0);
  return l;
}

Layer simple(LayerKind kind) {
  Layer l;
  l.kind = kind;
  return l;
}

Layer maxpool_layer(Index k) {
  Layer l = simple(LayerKind::kMaxPool);
  l.kernel = k;
  l.stride = k;
  return l;
}

Layer dense_layer(Index in_f, Index out_f, Rng& rng) {
  Layer l;
  l.kind = LayerKind::kDense;
  l.weight = Tensor({out_f, in_f});
  const double scale = std::sqrt(1.0 / double(in_f));
  for (Index i = 0; i < l.weight.size(); ++i) l.weight[i] = scale * rng.normal();
  l.bias = Tensor({out_f});
  return l;
}

void conv_block(std::vector<Layer>& layers, Index in_c, Index out_c, Rng& rng) {
  layers.push_back(conv_layer(in_c, out_c, 3, 1, rng));
  layers.push_back(bn_layer(out_c));
  layers.push_back(simple(LayerKind::kRelu));
}

void residual_block(std::vector<Layer>& layers, Index c, Rng& rng) {
  layers.push_back(simple(LayerKind::kResidualBegin));
  conv_block(layers, c, c, rng);
  layers.push_back(conv_layer(c, c, 3, 1, rng));
  layers.push_back(bn_layer(c));
  layers.push_back(simple(LayerKind::kResidualAdd));
  layers.push_back(simple(LayerKind::kRelu));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw_format("unknown layer kind '" + std::string(name) + "'");
}

std::vector<std::size_t> Network::bn_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::kBatchNorm) idx.push_back(i);
  }
  return idx;
}

std::vector<Shape> layer_output_shapes(const Network& net, Index batch) {
  if (net.input_shape.size() != 3) throw_invalid("network input shape must be {C,H,W}");
  Shape cur{batch, net.input_shape[0], net.input_shape[1], net.input_shape[2]};
  std::vector<Shape> saved, out;
  auto fail = [](std::size_t i, const std::string& why) {
    throw_invalid("layer " + std::to_string(i) + ": " + why);
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    switch (l.kind) {
      case LayerKind::kConv: {
        if (l.bias.size() != l.weight.dim(0)) fail(i, "conv bias length mismatch");
        const auto g = ops::conv_geometry(cur, l.weight.shape(), l.stride, l.pad);
        cur = {batch, g.out_c, g.out_h, g.out_w};
        break;
      }
      case LayerKind::kBatchNorm:
        if (cur.size() != 4) fail(i, "batchnorm needs a [B,C,H,W] input");
        for (const Tensor* t : {&l.gamma, &l.beta, &l.running_mean, &l.running_var}) {
          if (t->size() != cur[1]) fail(i, "batchnorm parameter length does not match channels");
        }
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kMaxPool:
        if (cur.size() != 4 || l.kernel < 1 || l.stride < 1 || l.kernel > cur[2] || l.kernel > cur[3] ||
            (cur[2] - l.kernel) % l.stride != 0 || (cur[3] - l.kernel) % l.stride != 0) {
          fail(i, "maxpool window does not tile its input");
        }
        cur = {batch, cur[1], (cur[2] - l.kernel) / l.stride + 1, (cur[3] - l.kernel) / l.stride + 1};
        break;
      case LayerKind::kGlobalAvgPool:
        if (cur.size() != 4) fail(i, "global_avgpool needs a [B,C,H,W] input");
        cur = {batch, cur[1]};
        break;
      case LayerKind::kDense: {
        if (l.weight.rank() != 2) fail(i, "dense weight must be rank 2");
        const Index features = shape_size(cur) / batch;
        if (l.weight.dim(1) != features || l.bias.size() != l.weight.dim(0)) fail(i, "dense shape mismatch");
        cur = {batch, l.weight.dim(0)};
        break;
      }
      case LayerKind::kResidualBegin:
        saved.push_back(cur);
        break;
      case LayerKind::kResidualAdd:
        if (saved.empty()) fail(i, "residual_add without a matching residual_begin");
        if (saved.back() != cur) fail(i, "residual shapes differ");
        saved.pop_back();
        break;
    }
    out.push_back(cur);
  }
  if (!saved.empty()) throw_invalid("residual_begin without a matching residual_add");
  return out;
}

void validate(const Network& net) {
  const auto shapes = layer_output_shapes(net, 1);
  if (shapes.empty() || shapes.back() != Shape{1, net.classes}) {
    throw_invalid("network output does not match class count " + std::to_string(net.classes));
  }
  if (net.bn_count() == 0) throw_invalid("network has no batchnorm layers");
  for (std::size_t i : net.bn_layers()) {
    if ((net.layers[i].running_var.array() < 0.0).any()) throw_invalid("batchnorm running_var must be >= 0");
  }
}

std::vector<std::string> reference_architectures() { return {"cnn5bn", "res6bn"}; }

Network build_reference_cnn(std::string_view arch, const Shape& input_shape, Index classes, std::uint64_t seed) {
  if (input_shape.size() != 3) throw_invalid("input shape must be {C,H,W}");
  if (classes < 2) throw_invalid("need at least two classes");
  Network net{std::string(arch), input_shape, classes, {}};
  Rng rng(seed);
  auto& L = net.layers;
  const Index in_c = input_shape[0];
  if (arch == "cnn5bn") {
    conv_block(L, in_c, 8, rng);
    L.push_back(maxpool_layer(2));
    conv_block(L, 8, 16, rng);
    L.push_back(maxpool_layer(2));
    conv_block(L, 16, 32, rng);
    L.push_back(simple(LayerKind::kGlobalAvgPool));
    L.push_back(dense_layer(32, classes, rng));
  } else if (arch == "res6bn") {
    conv_block(L, in_c, 8, rng);
    residual_block(L, 8, rng);
    L.push_back(maxpool_layer(2));
    conv_block(L, 8, 16, rng);
    residual_block(L, 16, rng);
    L.push_back(maxpool_layer(2));
    L.push_back(simple(LayerKind::kGlobalAvgPool));
    L.push_back(dense_layer(16, classes, rng));
  } else {
    throw_invalid("unknown architecture '" + std::string(arch) + "'");
  }
  validate(net);
  return net;
}

BnStats extract_bn_stats(const Network& net) {
  BnStats s;
  for (std::size_t i : net.bn_layers()) {
    const Layer& l = net.layers[i];
    s.mu.push_back(l.running_mean);
    s.sigma.push_back(bn_sigma(l));
  }
  return s;
}

Tensor forward(const Network& net, const Tensor& batch, const LayerHook& hook) {
  std::vector<Tensor> saved;
  Tensor x = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    x = apply_layer(net.layers[i], x, saved);
    if (hook) hook(i, x);
  }
  return x;
}

std::vector<Tensor> bn_inputs(const Network& net, const Tensor& batch) {
  std::vector<Tensor> saved, inputs;
  Tensor x = batch;
  for (const Layer& l : net.layers) {
    if (l.kind == LayerKind::kBatchNorm) inputs.push_back(x);
    x = apply_layer(l, x, saved);
  }
  return inputs;
}

FeatureStats feature_stats(const Network& net, const Tensor& batch, bool per_sample) {
  FeatureStats fs;
  fs.per_sample = per_sample;
  if (!per_sample) {
    for (const Tensor& in : bn_inputs(net, batch)) {
      auto m = ops::per_channel_moments(in, false);
      const Index c = m.mean.size();
      fs.mean.push_back(m.mean.reshaped({1, c}));
      fs.std.push_back(m.std.reshaped({1, c}));
    }
    return fs;
  }
  std::vector<std::vector<Tensor>> means, stds;
  for (Index begin = 0; begin < batch.dim(0); begin += kEvalChunk) {
    const auto inputs = bn_inputs(net, batch.slice_batch(begin, std::min(batch.dim(0), begin + kEvalChunk)));
    means.resize(inputs.size());
    stds.resize(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto m = ops::per_channel_moments(inputs[i], true);
      means[i].push_back(std::move(m.mean));
      stds[i].push_back(std::move(m.std));
    }
  }
  for (std::size_t i = 0; i < means.size(); ++i) {
    fs.mean.push_back(concat_batch(means[i]));
    fs.std.push_back(concat_batch(stds[i]));
  }
  return fs;
}

Capture forward_capture(const Network& net, const Tensor& batch, bool per_sample) {
  const Shape expected{net.input_shape[0], net.input_shape[1], net.input_shape[2]};
  if (batch.rank() != 4 || !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    throw_invalid("forward_capture: batch " + shape_string(batch.shape()) + " does not match network input " +
                  shape_string(expected));
  }
  Capture c;
  c.stats.per_sample = per_sample;
  auto& t = c.tape;
  c.input = t.input(batch);
  Var x = c.input;
  std::vector<Var> saved;
  for (const Layer& l : net.layers) {
    switch (l.kind) {
      case LayerKind::kConv:
        x = ad::conv2d(t, x, l.weight, l.bias, l.stride, l.pad);
        break;
      case LayerKind::kBatchNorm: {
        auto [mean, std] = ad::moments(t, x, per_sample);
        c.bn_mean.push_back(mean);
        c.bn_std.push_back(std);
        const Index ch = l.running_mean.size();
        const Index rows = per_sample ? batch.dim(0) : 1;
        c.stats.mean.push_back(t.value(mean).reshaped({rows, ch}));
        c.stats.std.push_back(t.value(std).reshaped({rows, ch}));
        x = ad::batchnorm_apply(t, x, l.running_mean, bn_sigma(l), l.gamma, l.beta);
        break;
      }
      case LayerKind::kRelu:
        x = ad::relu(t, x);
        break;
      case LayerKind::kMaxPool:
        x = ad::maxpool2d(t, x, l.kernel, l.stride);
        break;
      case LayerKind::kGlobalAvgPool:
        x = ad::global_avgpool(t, x);
        break;
      case LayerKind::kDense:
        x = ad::dense(t, x, l.weight, l.bias);
        break;
      case LayerKind::kResidualBegin:
        saved.push_back(x);
        break;
      case LayerKind::kResidualAdd:
        if (saved.empty()) throw_invalid("residual_add without residual_begin");
        x = ad::add(t, x, saved.back());
        saved.pop_back();
        break;
    }
  }
  c.logits = x;
  return c;
}

std::vector<Index> predict(const Tensor& logits) {
  if (logits.rank() != 2) throw_invalid("predict: logits must be [B,K]");
  std::vector<Index> out(std::size_t(logits.dim(0)));
  for (Index b = 0; b < logits.dim(0); ++b) {
    Index best = 0;
    for (Index k = 1; k < logits.dim(1); ++k) {
      if (logits.at(b, k) > logits.at(b, best)) best = k;
    }
    out[std::size_t(b)] = best;
  }
  return out;
}

double evaluate_with(const std::function<Tensor(const Tensor&)>& forward_fn, const Dataset& data, int threads) {
  if (data.size() == 0) throw_invalid("evaluate: empty dataset");
  if (!data.labeled() || Index(data.labels.size()) != data.size()) throw_invalid("evaluate: dataset is unlabeled");
  const Index chunks = (data.size() + kEvalChunk - 1) / kEvalChunk;
  std::vector<Index> correct(std::size_t(chunks), 0);
  auto run_chunk = [&](Index c) {
    const Index begin = c * kEvalChunk, end = std::min(data.size(), begin + kEvalChunk);
    const auto pred = predict(forward_fn(data.images.slice_batch(begin, end)));
    Index n = 0;
    for (Index i = begin; i < end; ++i) n += pred[std::size_t(i - begin)] == data.labels[std::size_t(i)];
    correct[std::size_t(c)] = n;
  };
  const int workers = std::max(1, std::min<int>(threads, int(chunks)));
  if (workers == 1) {
    for (Index c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (Index c = w; c < chunks; c += workers) run_chunk(c);
        } catch (...) {
          errors[std::size_t(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  Index total = 0;
  for (Index n : correct) total += n;
  return double(total) / double(data.size());
}

double evaluate_accuracy(const Network& net, const Dataset& data, int threads) {
  for (std::int32_t l : data.labels) {
    if (l < 0 || l >= net.classes) throw_invalid("evaluate_accuracy: label out of range");
  }
  return evaluate_with([&net](const Tensor& x) { return forward(net, x); }, data, threads);
}

}  // namespace dsg
