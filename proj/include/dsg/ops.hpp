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

// Eager forward kernels and the matching backward kernels. The tape in
// tape.hpp and the reference trainer both build on these.

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "dsg/tensor.hpp"

namespace dsg::ops {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw_invalid(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

// ---------------------------------------------------------------------------
// conv2d

struct ConvGeometry {
  Index batch, in_c, in_h, in_w;
  Index out_c, kernel_h, kernel_w;
  Index stride, pad;
  Index out_h, out_w;

  Index patch() const { return in_c * kernel_h * kernel_w; }
  Index out_plane() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& weight, Index stride, Index pad) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1 || pad < 0) throw_invalid("conv2d: stride must be >= 1 and pad >= 0");
  if (weight[1] != input[1]) {
    throw_invalid("conv2d: weight " + shape_string(weight) + " does not match input channels of " +
                  shape_string(input));
  }
  ConvGeometry g{input[0], input[1], input[2], input[3], weight[0], weight[2], weight[3], stride, pad, 0, 0};
  const Index span_h = g.in_h + 2 * pad - g.kernel_h;
  const Index span_w = g.in_w + 2 * pad - g.kernel_w;
  if (span_h < 0 || span_w < 0) throw_invalid("conv2d: kernel larger than padded input");
  if (span_h % stride != 0 || span_w % stride != 0) {
    throw_invalid("conv2d: output extent is not integral for input " + shape_string(input) + ", stride " +
                  std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

/// Unfold one sample [C,H,W] into a [C*kh*kw, out_h*out_w] row-major matrix.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* col) {
  const Index plane = g.out_plane();
  for (Index c = 0; c < g.in_c; ++c) {
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx) {
        Scalar* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride + ky - g.pad;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride + kx - g.pad;
            const bool inside = iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w;
            row[oy * g.out_w + ox] = inside ? image[(c * g.in_h + iy) * g.in_w + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add columns back onto a [C,H,W] image.
template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Scalar* image) {
  const Index plane = g.out_plane();
  for (Index c = 0; c < g.in_c; ++c) {
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx) {
        const Scalar* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.in_w) continue;
            image[(c * g.in_h + iy) * g.in_w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

/// Cross-correlation with zero padding: [B,Cin,H,W] x [Cout,Cin,kh,kw] -> [B,Cout,H',W'].
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weight,
                           const BasicTensor<Scalar>& bias, Index stride, Index pad) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), stride, pad);
  if (bias.size() != g.out_c) throw_invalid("conv2d: bias length does not match output channels");
  BasicTensor<Scalar> out({g.batch, g.out_c, g.out_h, g.out_w});
  RowMatrix<Scalar> col(g.patch(), g.out_plane());
  ConstMatrixMap<Scalar> w(weight.data(), g.out_c, g.patch());
  const Index in_len = g.in_c * g.in_h * g.in_w;
  for (Index b = 0; b < g.batch; ++b) {
    im2col(input.data() + b * in_len, g, col.data());
    MatrixMap<Scalar> o(out.data() + b * g.out_c * g.out_plane(), g.out_c, g.out_plane());
    o.noalias() = w * col;
    o.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data(), g.out_c);
  }
  require_finite(out, "conv2d");
  return out;
}

/// d(loss)/d(input) for conv2d given d(loss)/d(output).
template <typename Scalar>
BasicTensor<Scalar> conv2d_input_grad(const BasicTensor<Scalar>& grad_out, const BasicTensor<Scalar>& weight,
                                      const Shape& input_shape, Index stride, Index pad) {
  const ConvGeometry g = conv_geometry(input_shape, weight.shape(), stride, pad);
  BasicTensor<Scalar> grad_in(input_shape);
  RowMatrix<Scalar> dcol(g.patch(), g.out_plane());
  ConstMatrixMap<Scalar> w(weight.data(), g.out_c, g.patch());
  const Index in_len = g.in_c * g.in_h * g.in_w;
  for (Index b = 0; b < g.batch; ++b) {
    ConstMatrixMap<Scalar> go(grad_out.data() + b * g.out_c * g.out_plane(), g.out_c, g.out_plane());
    dcol.noalias() = w.transpose() * go;
    col2im_add(dcol.data(), g, grad_in.data() + b * in_len);
  }
  return grad_in;
}

/// Accumulates d(loss)/d(weight) and d(loss)/d(bias) for conv2d into the given buffers.
template <typename Scalar>
void conv2d_param_grad(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& grad_out, Index stride,
                       Index pad, BasicTensor<Scalar>& grad_weight, BasicTensor<Scalar>& grad_bias) {
  const ConvGeometry g = conv_geometry(input.shape(), grad_weight.shape(), stride, pad);
  RowMatrix<Scalar> col(g.patch(), g.out_plane());
  MatrixMap<Scalar> gw(grad_weight.data(), g.out_c, g.patch());
  const Index in_len = g.in_c * g.in_h * g.in_w;
  for (Index b = 0; b < g.batch; ++b) {
    im2col(input.data() + b * in_len, g, col.data());
    ConstMatrixMap<Scalar> go(grad_out.data() + b * g.out_c * g.out_plane(), g.out_c, g.out_plane());
    gw.noalias() += go * col.transpose();
    grad_bias.array() += go.rowwise().sum().array();
  }
}

// ---------------------------------------------------------------------------
// batch normalization (inference form, explicit statistics)

template <typename Scalar>
void check_channel_vectors(const BasicTensor<Scalar>& input, std::initializer_list<const BasicTensor<Scalar>*> vs,
                           const char* op) {
  require_rank(input.shape(), 4, op);
  for (const auto* v : vs) {
    if (v->size() != input.dim(1)) throw_invalid(std::string(op) + ": per-channel vector length mismatch");
  }
}

/// gamma * (input - mean) / std + beta, broadcast per channel.
template <typename Scalar>
BasicTensor<Scalar> batchnorm_apply(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& mean,
                                    const BasicTensor<Scalar>& std, const BasicTensor<Scalar>& gamma,
                                    const BasicTensor<Scalar>& beta) {
  check_channel_vectors(input, {&mean, &std, &gamma, &beta}, "batchnorm_apply");
  if (!(std.array() > Scalar(0)).all()) throw_invalid("batchnorm_apply: std must be strictly positive");
  const Index batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  BasicTensor<Scalar> out(input.shape());
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const Index at = (b * channels + c) * plane;
      const Scalar scale = gamma[c] / std[c];
      out.array().segment(at, plane) = (input.array().segment(at, plane) - mean[c]) * scale + beta[c];
    }
  }
  require_finite(out, "batchnorm_apply");
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> batchnorm_apply_input_grad(const BasicTensor<Scalar>& grad_out, const BasicTensor<Scalar>& std,
                                               const BasicTensor<Scalar>& gamma) {
  const Index batch = grad_out.dim(0), channels = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
  BasicTensor<Scalar> grad_in(grad_out.shape());
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const Index at = (b * channels + c) * plane;
      grad_in.array().segment(at, plane) = grad_out.array().segment(at, plane) * (gamma[c] / std[c]);
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// pointwise

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& input) {
  return BasicTensor<Scalar>(input.shape(), input.array().max(Scalar(0)));
}

/// Subgradient convention: the derivative at exactly 0 is 0.
template <typename Scalar>
BasicTensor<Scalar> relu_input_grad(const BasicTensor<Scalar>& grad_out, const BasicTensor<Scalar>& input) {
  return BasicTensor<Scalar>(grad_out.shape(),
                             (input.array() > Scalar(0)).select(grad_out.array(), Scalar(0)));
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw_invalid("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  BasicTensor<Scalar> out(a.shape(), a.array() + b.array());
  require_finite(out, "add");
  return out;
}

// ---------------------------------------------------------------------------
// pooling

template <typename Scalar>
struct MaxPoolResult {
  BasicTensor<Scalar> output;
  std::vector<Index> argmax;  // flat input index per output element
};

/// Lowest flat index wins among equal maxima.
template <typename Scalar>
MaxPoolResult<Scalar> maxpool2d(const BasicTensor<Scalar>& input, Index kernel, Index stride) {
  require_rank(input.shape(), 4, "maxpool2d");
  if (kernel < 1 || stride < 1) throw_invalid("maxpool2d: kernel and stride must be >= 1");
  const Index batch = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (kernel > h || kernel > w || (h - kernel) % stride != 0 || (w - kernel) % stride != 0) {
    throw_invalid("maxpool2d: window does not tile input " + shape_string(input.shape()));
  }
  const Index oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  MaxPoolResult<Scalar> r{BasicTensor<Scalar>({batch, channels, oh, ow}), {}};
  r.argmax.resize(std::size_t(r.output.size()));
  Index o = 0;
  for (Index bc = 0; bc < batch * channels; ++bc) {
    const Index base = bc * h * w;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, ++o) {
        Index best = base + (oy * stride) * w + ox * stride;
        for (Index ky = 0; ky < kernel; ++ky) {
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index at = base + (oy * stride + ky) * w + ox * stride + kx;
            if (input[at] > input[best]) best = at;
          }
        }
        r.output[o] = input[best];
        r.argmax[std::size_t(o)] = best;
      }
    }
  }
  return r;
}

template <typename Scalar>
BasicTensor<Scalar> maxpool2d_input_grad(const BasicTensor<Scalar>& grad_out, const std::vector<Index>& argmax,
                                         const Shape& input_shape) {
  BasicTensor<Scalar> grad_in(input_shape);
  for (Index o = 0; o < grad_out.size(); ++o) grad_in[argmax[std::size_t(o)]] += grad_out[o];
  return grad_in;
}

/// [B,C,H,W] -> [B,C]
template <typename Scalar>
BasicTensor<Scalar> global_avgpool(const BasicTensor<Scalar>& input) {
  require_rank(input.shape(), 4, "global_avgpool");
  const Index bc = input.dim(0) * input.dim(1), plane = input.dim(2) * input.dim(3);
  BasicTensor<Scalar> out({input.dim(0), input.dim(1)});
  for (Index i = 0; i < bc; ++i) out[i] = input.array().segment(i * plane, plane).sum() / Scalar(plane);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> global_avgpool_input_grad(const BasicTensor<Scalar>& grad_out, const Shape& input_shape) {
  BasicTensor<Scalar> grad_in(input_shape);
  const Index plane = input_shape[2] * input_shape[3];
  for (Index i = 0; i < grad_out.size(); ++i) {
    grad_in.array().segment(i * plane, plane).setConstant(grad_out[i] / Scalar(plane));
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// dense

/// [B,F...] x [O,F] -> [B,O]; trailing input axes are flattened.
template <typename Scalar>
BasicTensor<Scalar> dense(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weight,
                          const BasicTensor<Scalar>& bias) {
  require_rank(weight.shape(), 2, "dense weight");
  if (input.rank() < 2) throw_invalid("dense: input must have a batch axis and features");
  const Index batch = input.dim(0), features = input.size() / batch, out_f = weight.dim(0);
  if (weight.dim(1) != features || bias.size() != out_f) {
    throw_invalid("dense: weight " + shape_string(weight.shape()) + " incompatible with input " +
                  shape_string(input.shape()));
  }
  BasicTensor<Scalar> out({batch, out_f});
  MatrixMap<Scalar> o(out.data(), batch, out_f);
  o.noalias() = ConstMatrixMap<Scalar>(input.data(), batch, features) *
                ConstMatrixMap<Scalar>(weight.data(), out_f, features).transpose();
  o.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.data(), out_f);
  require_finite(out, "dense");
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> dense_input_grad(const BasicTensor<Scalar>& grad_out, const BasicTensor<Scalar>& weight,
                                     const Shape& input_shape) {
  BasicTensor<Scalar> grad_in(input_shape);
  const Index batch = input_shape[0], features = weight.dim(1);
  MatrixMap<Scalar>(grad_in.data(), batch, features).noalias() =
      ConstMatrixMap<Scalar>(grad_out.data(), batch, weight.dim(0)) *
      ConstMatrixMap<Scalar>(weight.data(), weight.dim(0), features);
  return grad_in;
}

// ---------------------------------------------------------------------------
// per-channel moments

template <typename Scalar>
struct Moments {
  BasicTensor<Scalar> mean;  // [B,C] per sample, [C] otherwise
  BasicTensor<Scalar> std;
};

/// Population mean and std per channel of a [B,C,H,W] tensor, reduced over
/// {H,W} per sample or over {B,H,W}. Values are shifted by the first element
/// of each reduction set, so a constant set yields (constant, 0) exactly.
template <typename Scalar>
Moments<Scalar> per_channel_moments(const BasicTensor<Scalar>& input, bool per_sample) {
  require_rank(input.shape(), 4, "per_channel_moments");
  const Index batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  const Index count = per_sample ? plane : batch * plane;
  if (count < 2) throw_invalid("per_channel_moments: fewer than two positions per reduction set");
  const Index groups = per_sample ? batch : 1;
  const Index samples_per_group = per_sample ? 1 : batch;
  Shape out_shape = per_sample ? Shape{batch, channels} : Shape{channels};
  Moments<Scalar> m{BasicTensor<Scalar>(out_shape), BasicTensor<Scalar>(out_shape)};
  for (Index g = 0; g < groups; ++g) {
    for (Index c = 0; c < channels; ++c) {
      const Scalar shift = input[((g * samples_per_group) * channels + c) * plane];
      Scalar sum = 0;
      for (Index s = 0; s < samples_per_group; ++s) {
        const Index b = g * samples_per_group + s;
        sum += (input.array().segment((b * channels + c) * plane, plane) - shift).sum();
      }
      const Scalar mean = shift + sum / Scalar(count);
      Scalar sq = 0;
      for (Index s = 0; s < samples_per_group; ++s) {
        const Index b = g * samples_per_group + s;
        sq += (input.array().segment((b * channels + c) * plane, plane) - mean).square().sum();
      }
      m.mean[g * channels + c] = mean;
      m.std[g * channels + c] = std::sqrt(sq / Scalar(count));
    }
  }
  require_finite(m.mean, "per_channel_moments");
  require_finite(m.std, "per_channel_moments");
  return m;
}

/// Gradient of per_channel_moments w.r.t. its input. Either incoming gradient
/// may be empty (size 0) when that branch is unused. A zero std with an
/// active std branch is an error: d(std)/dx is unbounded there.
template <typename Scalar>
BasicTensor<Scalar> per_channel_moments_input_grad(const BasicTensor<Scalar>& input, const Moments<Scalar>& m,
                                                   bool per_sample, const BasicTensor<Scalar>* grad_mean,
                                                   const BasicTensor<Scalar>* grad_std) {
  const Index batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  const Index count = per_sample ? plane : batch * plane;
  BasicTensor<Scalar> grad_in(input.shape());
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const Index k = per_sample ? b * channels + c : c;
      const Index at = (b * channels + c) * plane;
      auto g = grad_in.array().segment(at, plane);
      if (grad_mean) g += (*grad_mean)[k] / Scalar(count);
      if (grad_std) {
        if (m.std[k] == Scalar(0)) {
          throw_numerical("per_channel_moments backward: std is zero at channel " + std::to_string(c) +
                          ", derivative undefined");
        }
        g += (*grad_std)[k] * (input.array().segment(at, plane) - m.mean[k]) / (Scalar(count) * m.std[k]);
      }
    }
  }
  return grad_in;
}

}  // namespace dsg::ops
