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
#include "dsg/trainer.hpp"

#include <cmath>
#include <numeric>

#include "dsg/ops.hpp"
#include "dsg/random.hpp"

namespace dsg {

namespace {

struct LayerCache {
  Tensor input;
  Tensor xhat;
  Tensor inv_std;
  std::vector<Index> argmax;
};

struct Slot {
  Tensor* param;
  Tensor grad;
  Tensor velocity;
};

class Trainer {
 public:
  Trainer(Network& net, const TrainConfig& cfg) : net_(net), cfg_(cfg), caches_(net.layers.size()) {
    for (Layer& l : net_.layers) {
      for (Tensor* p : params_of(l)) slots_.push_back({p, Tensor(p->shape()), Tensor(p->shape())});
    }
  }

  /// One SGD step on a minibatch; returns the mean cross-entropy.
  double step(const Tensor& images, const std::vector<std::int32_t>& labels) {
    for (auto& s : slots_) s.grad.array().setZero();
    const Tensor logits = forward_train(images);
    Tensor grad;
    const double loss = softmax_cross_entropy(logits, labels, grad);
    backward(grad);
    for (auto& s : slots_) {
      s.velocity.array() = cfg_.momentum * s.velocity.array() + s.grad.array();
      s.param->array() -= lr_ * s.velocity.array();
    }
    return loss;
  }

  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  static std::vector<Tensor*> params_of(Layer& l) {
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kDense:
        return {&l.weight, &l.bias};
      case LayerKind::kBatchNorm:
        return {&l.gamma, &l.beta};
      default:
        return {};
    }
  }

  Tensor forward_train(const Tensor& images) {
    std::vector<Tensor> saved;
    Tensor x = images;
    for (std::size_t i = 0; i < net_.layers.size(); ++i) {
      Layer& l = net_.layers[i];
      LayerCache& c = caches_[i];
      switch (l.kind) {
        case LayerKind::kConv:
          c.input = x;
          x = ops::conv2d(x, l.weight, l.bias, l.stride, l.pad);
          break;
        case LayerKind::kBatchNorm:
          x = batchnorm_train(l, c, x);
          break;
        case LayerKind::kRelu:
          c.input = x;
          x = ops::relu(x);
          break;
        case LayerKind::kMaxPool: {
          c.input = x;
          auto r = ops::maxpool2d(x, l.kernel, l.stride);
          c.argmax = std::move(r.argmax);
          x = std::move(r.output);
          break;
        }
        case LayerKind::kGlobalAvgPool:
          c.input = x;
          x = ops::global_avgpool(x);
          break;
        case LayerKind::kDense:
          c.input = x;
          x = ops::dense(x, l.weight, l.bias);
          break;
        case LayerKind::kResidualBegin:
          saved.push_back(x);
          break;
        case LayerKind::kResidualAdd:
          x = ops::add(x, saved.back());
          saved.pop_back();
          break;
      }
    }
    return x;
  }

  Tensor batchnorm_train(Layer& l, LayerCache& c, const Tensor& x) {
    const auto m = ops::per_channel_moments(x, false);
    const Index channels = x.dim(1), plane = x.dim(2) * x.dim(3), batch = x.dim(0);
    c.inv_std = Tensor(m.std.shape(), (m.std.array().square() + kBnEpsilon).rsqrt());
    c.xhat = Tensor(x.shape());
    Tensor y(x.shape());
    for (Index b = 0; b < batch; ++b) {
      for (Index ch = 0; ch < channels; ++ch) {
        const Index at = (b * channels + ch) * plane;
        c.xhat.array().segment(at, plane) = (x.array().segment(at, plane) - m.mean[ch]) * c.inv_std[ch];
        y.array().segment(at, plane) = c.xhat.array().segment(at, plane) * l.gamma[ch] + l.beta[ch];
      }
    }
    const double keep = 1.0 - cfg_.bn_momentum;
    l.running_mean.array() = keep * l.running_mean.array() + cfg_.bn_momentum * m.mean.array();
    l.running_var.array() = keep * l.running_var.array() + cfg_.bn_momentum * m.std.array().square();
    return y;
  }

  void backward(Tensor grad) {
    std::vector<Tensor> pending;
    std::size_t slot = slots_.size();
    for (std::size_t k = net_.layers.size(); k-- > 0;) {
      Layer& l = net_.layers[k];
      LayerCache& c = caches_[k];
      switch (l.kind) {
        case LayerKind::kConv: {
          slot -= 2;
          ops::conv2d_param_grad(c.input, grad, l.stride, l.pad, slots_[slot].grad, slots_[slot + 1].grad);
          if (k > 0) grad = ops::conv2d_input_grad(grad, l.weight, c.input.shape(), l.stride, l.pad);
          break;
        }
        case LayerKind::kBatchNorm: {
          slot -= 2;
          grad = batchnorm_backward(l, c, grad, slots_[slot].grad, slots_[slot + 1].grad);
          break;
        }
        case LayerKind::kRelu:
          grad = ops::relu_input_grad(grad, c.input);
          break;
        case LayerKind::kMaxPool:
          grad = ops::maxpool2d_input_grad(grad, c.argmax, c.input.shape());
          break;
        case LayerKind::kGlobalAvgPool:
          grad = ops::global_avgpool_input_grad(grad, c.input.shape());
          break;
        case LayerKind::kDense: {
          slot -= 2;
          const Index batch = c.input.dim(0), features = l.weight.dim(1), out_f = l.weight.dim(0);
          ops::MatrixMap<double>(slots_[slot].grad.data(), out_f, features).noalias() +=
              ops::ConstMatrixMap<double>(grad.data(), batch, out_f).transpose() *
              ops::ConstMatrixMap<double>(c.input.data(), batch, features);
          slots_[slot + 1].grad.array() +=
              ops::ConstMatrixMap<double>(grad.data(), batch, out_f).colwise().sum().transpose().array();
          grad = ops::dense_input_grad(grad, l.weight, c.input.shape());
          break;
        }
        case LayerKind::kResidualAdd:
          pending.push_back(grad);
          break;
        case LayerKind::kResidualBegin:
          grad.array() += pending.back().array();
          pending.pop_back();
          break;
      }
    }
  }

  static Tensor batchnorm_backward(const Layer& l, const LayerCache& c, const Tensor& dy, Tensor& dgamma,
                                   Tensor& dbeta) {
    const Index channels = dy.dim(1), plane = dy.dim(2) * dy.dim(3), batch = dy.dim(0);
    const double n = double(batch * plane);
    Tensor dx(dy.shape());
    for (Index ch = 0; ch < channels; ++ch) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (Index b = 0; b < batch; ++b) {
        const Index at = (b * channels + ch) * plane;
        sum_dy += dy.array().segment(at, plane).sum();
        sum_dy_xhat += (dy.array().segment(at, plane) * c.xhat.array().segment(at, plane)).sum();
      }
      dgamma[ch] += sum_dy_xhat;
      dbeta[ch] += sum_dy;
      const double g = l.gamma[ch] * c.inv_std[ch] / n;
      for (Index b = 0; b < batch; ++b) {
        const Index at = (b * channels + ch) * plane;
        dx.array().segment(at, plane) =
            g * (n * dy.array().segment(at, plane) - sum_dy - c.xhat.array().segment(at, plane) * sum_dy_xhat);
      }
    }
    return dx;
  }

  static double softmax_cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels, Tensor& grad) {
    const Index batch = logits.dim(0), classes = logits.dim(1);
    grad = Tensor(logits.shape());
    double loss = 0;
    for (Index b = 0; b < batch; ++b) {
      const auto row = logits.array().segment(b * classes, classes);
      const double top = row.maxCoeff();
      const double z = (row - top).exp().sum();
      const auto y = Index(labels[std::size_t(b)]);
      loss += std::log(z) - (row[y] - top);
      grad.array().segment(b * classes, classes) = (row - top).exp() / z / double(batch);
      grad[b * classes + y] -= 1.0 / double(batch);
    }
    return loss / double(batch);
  }

  Network& net_;
  const TrainConfig& cfg_;
  std::vector<LayerCache> caches_;
  std::vector<Slot> slots_;
  double lr_ = 0.0;
};

Tensor gather_rows(const Tensor& images, const std::vector<Index>& order, Index begin, Index end) {
  Shape s = images.shape();
  s[0] = end - begin;
  Tensor out(s);
  const Index row = images.size() / images.dim(0);
  for (Index i = begin; i < end; ++i) {
    out.array().segment((i - begin) * row, row) = images.array().segment(order[std::size_t(i)] * row, row);
  }
  return out;
}

}  // namespace

TrainResult train_reference(Network net, const Dataset& train, const Dataset* validation, const TrainConfig& cfg) {
  validate(net);
  if (train.size() == 0) throw_invalid("train_reference: empty training set");
  if (Index(train.labels.size()) != train.size()) throw_invalid("train_reference: training set is unlabeled");
  for (std::int32_t l : train.labels) {
    if (l < 0 || l >= net.classes) throw_invalid("train_reference: label out of range");
  }
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0)) {
    throw_invalid("train_reference: epochs >= 0, batch_size >= 1 and learning_rate > 0 required");
  }

  TrainResult result;
  Trainer trainer(net, cfg);
  Rng rng(cfg.seed);
  std::vector<Index> order(std::size_t(train.size()));
  const Index steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = double(steps_per_epoch) * cfg.epochs;
  Index step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double loss_sum = 0;
    for (Index begin = 0; begin < train.size(); begin += cfg.batch_size, ++step) {
      const Index end = std::min(train.size(), begin + cfg.batch_size);
      // Linear decay to 10% of the initial rate.
      trainer.set_learning_rate(cfg.learning_rate * (1.0 - 0.9 * double(step) / total_steps));
      std::vector<std::int32_t> labels;
      for (Index i = begin; i < end; ++i) labels.push_back(train.labels[std::size_t(order[std::size_t(i)])]);
      loss_sum += trainer.step(gather_rows(train.images, order, begin, end), labels) * double(end - begin);
    }
    const double mean_loss = loss_sum / double(train.size());
    if (!std::isfinite(mean_loss)) throw_numerical("train_reference: non-finite loss in epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean_loss);
  }
  result.train_accuracy = evaluate_accuracy(net, train);
  if (validation && validation->size() > 0) result.val_accuracy = evaluate_accuracy(net, *validation);
  result.net = std::move(net);
  return result;
}

}  // namespace dsg
