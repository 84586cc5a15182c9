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

// Reverse-mode recording of forward computations, sufficient to carry the
// gradient of a scalar back to the input batch. Parameters enter operations
// as constants; there are no parameter gradients.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "dsg/ops.hpp"
#include "dsg/tensor.hpp"

namespace dsg {

/// Handle to a value slot of a Tape.
struct Var {
  std::size_t slot = std::numeric_limits<std::size_t>::max();
};

template <typename Scalar>
class Tape {
 public:
  using TensorT = BasicTensor<Scalar>;
  /// Receives d(loss)/d(output) and accumulates into the parents' gradient
  /// buffers. A null buffer means that parent needs no gradient. Closures read
  /// saved inputs through `tape`, so a Tape may be moved after recording.
  using Backward =
      std::function<void(const Tape& tape, const TensorT& grad_out, std::span<TensorT* const> grad_in)>;

  Var input(TensorT value) {
    values_.push_back(std::move(value));
    return Var{values_.size() - 1};
  }

  Var record(TensorT value, std::vector<Var> parents, Backward backward) {
    values_.push_back(std::move(value));
    Var out{values_.size() - 1};
    Node node{{}, out.slot, std::move(backward)};
    for (Var p : parents) node.parents.push_back(check(p));
    nodes_.push_back(std::move(node));
    return out;
  }

  const TensorT& value(Var v) const { return values_[check(v)]; }
  std::size_t op_count() const { return nodes_.size(); }

  /// Replays the record in reverse and returns d(loss)/d(input). The loss must
  /// be a single-element value that depends on `input`.
  TensorT backprop_to_input(Var loss, Var input) const {
    check(loss);
    check(input);
    if (nodes_.empty()) throw_invalid("backprop_to_input: empty tape");
    if (values_[loss.slot].size() != 1) throw_invalid("backprop_to_input: loss is not a scalar");

    std::vector<char> reach(values_.size(), 0);
    reach[input.slot] = 1;
    for (const Node& n : nodes_) {
      for (std::size_t p : n.parents) reach[n.output] |= reach[p];
    }
    if (!reach[loss.slot]) throw_invalid("backprop_to_input: loss does not depend on the input");

    std::vector<TensorT> grads(values_.size());
    std::vector<char> has(values_.size(), 0);
    grads[loss.slot] = TensorT::constant(values_[loss.slot].shape(), Scalar(1));
    has[loss.slot] = 1;
    std::vector<TensorT*> buffers;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!has[it->output] || !reach[it->output]) continue;
      buffers.clear();
      for (std::size_t p : it->parents) {
        if (!reach[p]) {
          buffers.push_back(nullptr);
          continue;
        }
        if (!has[p]) {
          grads[p] = TensorT(values_[p].shape());
          has[p] = 1;
        }
        buffers.push_back(&grads[p]);
      }
      it->backward(*this, grads[it->output], std::span<TensorT* const>(buffers));
    }
    require_finite(grads[input.slot], "backprop_to_input");
    return grads[input.slot];
  }

 private:
  struct Node {
    std::vector<std::size_t> parents;
    std::size_t output;
    Backward backward;
  };

  std::size_t check(Var v) const {
    if (v.slot >= values_.size()) throw_invalid("tape: variable does not belong to this tape");
    return v.slot;
  }

  std::vector<TensorT> values_;
  std::vector<Node> nodes_;
};

/// Differentiable counterparts of the eager kernels in ops.hpp.
namespace ad {

template <typename Scalar>
using TensorOf = BasicTensor<Scalar>;

template <typename Scalar>
Var conv2d(Tape<Scalar>& t, Var x, TensorOf<Scalar> weight, const TensorOf<Scalar>& bias, Index stride,
           Index pad) {
  const Shape in_shape = t.value(x).shape();
  auto out = ops::conv2d(t.value(x), weight, bias, stride, pad);
  return t.record(std::move(out), {x},
                  [w = std::move(weight), in_shape, stride, pad](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
                    if (grads[0]) grads[0]->array() += ops::conv2d_input_grad(g, w, in_shape, stride, pad).array();
                  });
}

template <typename Scalar>
Var batchnorm_apply(Tape<Scalar>& t, Var x, const TensorOf<Scalar>& mean, TensorOf<Scalar> std,
                    TensorOf<Scalar> gamma, const TensorOf<Scalar>& beta) {
  auto out = ops::batchnorm_apply(t.value(x), mean, std, gamma, beta);
  return t.record(std::move(out), {x},
                  [s = std::move(std), gm = std::move(gamma)](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
                    if (grads[0]) grads[0]->array() += ops::batchnorm_apply_input_grad(g, s, gm).array();
                  });
}

template <typename Scalar>
Var relu(Tape<Scalar>& t, Var x) {
  return t.record(ops::relu(t.value(x)), {x}, [x](const Tape<Scalar>& tp, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) grads[0]->array() += ops::relu_input_grad(g, tp.value(x)).array();
  });
}

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) {
  return t.record(ops::add(t.value(a), t.value(b)), {a, b}, [](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) grads[0]->array() += g.array();
    if (grads[1]) grads[1]->array() += g.array();
  });
}

template <typename Scalar>
Var maxpool2d(Tape<Scalar>& t, Var x, Index kernel, Index stride) {
  const Shape in_shape = t.value(x).shape();
  auto r = ops::maxpool2d(t.value(x), kernel, stride);
  return t.record(std::move(r.output), {x},
                  [arg = std::move(r.argmax), in_shape](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
                    if (grads[0]) grads[0]->array() += ops::maxpool2d_input_grad(g, arg, in_shape).array();
                  });
}

template <typename Scalar>
Var global_avgpool(Tape<Scalar>& t, Var x) {
  const Shape in_shape = t.value(x).shape();
  return t.record(ops::global_avgpool(t.value(x)), {x}, [in_shape](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) grads[0]->array() += ops::global_avgpool_input_grad(g, in_shape).array();
  });
}

template <typename Scalar>
Var dense(Tape<Scalar>& t, Var x, TensorOf<Scalar> weight, const TensorOf<Scalar>& bias) {
  const Shape in_shape = t.value(x).shape();
  auto out = ops::dense(t.value(x), weight, bias);
  return t.record(std::move(out), {x}, [w = std::move(weight), in_shape](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) grads[0]->array() += ops::dense_input_grad(g, w, in_shape).array();
  });
}

/// Per-channel (mean, std) of a [B,C,H,W] value; see ops::per_channel_moments.
/// Mean and std are separate slots so an unused branch costs nothing.
template <typename Scalar>
std::pair<Var, Var> moments(Tape<Scalar>& t, Var x, bool per_sample) {
  auto m = std::make_shared<ops::Moments<Scalar>>(ops::per_channel_moments(t.value(x), per_sample));
  Var mean = t.record(m->mean, {x}, [x, m, per_sample](const Tape<Scalar>& tp, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) {
      grads[0]->array() += ops::per_channel_moments_input_grad<Scalar>(tp.value(x), *m, per_sample, &g, nullptr).array();
    }
  });
  Var std = t.record(m->std, {x}, [x, m, per_sample](const Tape<Scalar>& tp, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) {
      grads[0]->array() += ops::per_channel_moments_input_grad<Scalar>(tp.value(x), *m, per_sample, nullptr, &g).array();
    }
  });
  return {mean, std};
}

/// x - c where c repeats along the last axis of x (c.size() divides x.size()).
template <typename Scalar>
Var sub_row(Tape<Scalar>& t, Var x, const TensorOf<Scalar>& c) {
  const auto& xv = t.value(x);
  if (c.size() == 0 || xv.size() % c.size() != 0 || xv.shape().back() != c.size()) {
    throw_invalid("sub_row: row vector length does not match the last axis");
  }
  TensorOf<Scalar> out(xv.shape());
  const Index rows = xv.size() / c.size();
  for (Index r = 0; r < rows; ++r) {
    out.array().segment(r * c.size(), c.size()) = xv.array().segment(r * c.size(), c.size()) - c.array();
  }
  return t.record(std::move(out), {x}, [](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) grads[0]->array() += g.array();
  });
}

/// |x| with derivative sign(x), taken as 0 at x = 0.
template <typename Scalar>
Var abs(Tape<Scalar>& t, Var x) {
  return t.record(TensorOf<Scalar>(t.value(x).shape(), t.value(x).array().abs()), {x},
                  [x](const Tape<Scalar>& tp, const TensorOf<Scalar>& g, auto grads) {
                    if (grads[0]) grads[0]->array() += g.array() * tp.value(x).array().sign();
                  });
}

template <typename Scalar>
Var square(Tape<Scalar>& t, Var x) {
  return t.record(TensorOf<Scalar>(t.value(x).shape(), t.value(x).array().square()), {x},
                  [x](const Tape<Scalar>& tp, const TensorOf<Scalar>& g, auto grads) {
                    if (grads[0]) grads[0]->array() += Scalar(2) * g.array() * tp.value(x).array();
                  });
}

/// Sum of every element -> [1].
template <typename Scalar>
Var sum(Tape<Scalar>& t, Var x) {
  TensorOf<Scalar> out({1});
  out[0] = t.value(x).array().sum();
  return t.record(std::move(out), {x}, [](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) grads[0]->array() += g[0];
  });
}

/// Sum over the last axis: [R,C] -> [R], [C] -> [1].
template <typename Scalar>
Var row_sum(Tape<Scalar>& t, Var x) {
  const auto& xv = t.value(x);
  const Index cols = xv.shape().back();
  const Index rows = xv.size() / cols;
  TensorOf<Scalar> out({rows});
  for (Index r = 0; r < rows; ++r) out[r] = xv.array().segment(r * cols, cols).sum();
  return t.record(std::move(out), {x}, [cols, rows](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    if (!grads[0]) return;
    for (Index r = 0; r < rows; ++r) grads[0]->array().segment(r * cols, cols) += g[r];
  });
}

/// Stacks N length-R vectors as the columns of an [R,N] value.
template <typename Scalar>
Var stack_columns(Tape<Scalar>& t, const std::vector<Var>& columns) {
  if (columns.empty()) throw_invalid("stack_columns: no columns");
  const Index rows = t.value(columns.front()).size();
  const Index n = Index(columns.size());
  TensorOf<Scalar> out({rows, n});
  for (Index j = 0; j < n; ++j) {
    const auto& col = t.value(columns[std::size_t(j)]);
    if (col.size() != rows) throw_invalid("stack_columns: column length mismatch");
    for (Index r = 0; r < rows; ++r) out.at(r, j) = col[r];
  }
  return t.record(std::move(out), columns, [rows, n](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    for (Index j = 0; j < n; ++j) {
      if (!grads[std::size_t(j)]) continue;
      for (Index r = 0; r < rows; ++r) (*grads[std::size_t(j)])[r] += g.at(r, j);
    }
  });
}

/// scale * sum(weights .* x) -> [1]. Weights are constants with x's shape.
template <typename Scalar>
Var weighted_sum(Tape<Scalar>& t, Var x, TensorOf<Scalar> weights, Scalar scale) {
  if (weights.shape() != t.value(x).shape()) throw_invalid("weighted_sum: weight shape mismatch");
  TensorOf<Scalar> out({1});
  out[0] = scale * (weights.array() * t.value(x).array()).sum();
  return t.record(std::move(out), {x}, [w = std::move(weights), scale](const Tape<Scalar>&, const TensorOf<Scalar>& g, auto grads) {
    if (grads[0]) grads[0]->array() += (g[0] * scale) * w.array();
  });
}

}  // namespace ad
}  // namespace dsg
