#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "sbr/tensor.hpp"

namespace sbr {

// Divisor on logits inside sigmoid/softmax. T < 1 sharpens the transition,
// T > 1 softens it.
struct TemperatureConfig {
  double T = 1.0;

  void validate() const {
    if (!(T > 0.0)) throw ConfigError("temperature must be > 0");
  }
};

enum class Padding { kSame, kValid };

namespace detail {

template <class S>
void accumulate(Node<S>& parent, const Array<S>& delta) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  parent.grad += delta;
}

template <class S>
using MatMap = Eigen::Map<MatrixRM<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const MatrixRM<S>>;

// Geometry of one spatial conv axis pair.
struct ConvGeom {
  Eigen::Index in_h, in_w, channels;
  Eigen::Index kh, kw;
  Eigen::Index stride;
  Eigen::Index out_h, out_w;
  Eigen::Index pad_top, pad_left;
};

inline ConvGeom conv_geometry(Eigen::Index in_h, Eigen::Index in_w,
                              Eigen::Index channels, Eigen::Index kh,
                              Eigen::Index kw, Eigen::Index stride,
                              Padding padding) {
  ConvGeom g{in_h, in_w, channels, kh, kw, stride, 0, 0, 0, 0};
  if (padding == Padding::kValid) {
    if (kh > in_h || kw > in_w)
      throw DimensionError("conv2d: kernel exceeds input under valid padding");
    g.out_h = (in_h - kh) / stride + 1;
    g.out_w = (in_w - kw) / stride + 1;
  } else {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const Eigen::Index pad_h =
        std::max<Eigen::Index>((g.out_h - 1) * stride + kh - in_h, 0);
    const Eigen::Index pad_w =
        std::max<Eigen::Index>((g.out_w - 1) * stride + kw - in_w, 0);
    g.pad_top = pad_h / 2;  // extra padding goes to bottom/right
    g.pad_left = pad_w / 2;
  }
  return g;
}

// Gathers kh*kw*C patches into rows of a [out_h*out_w, kh*kw*C] matrix.
template <class S>
void im2col(const S* x, const ConvGeom& g, MatrixRM<S>& cols) {
  cols.setZero(g.out_h * g.out_w, g.kh * g.kw * g.channels);
  for (Eigen::Index oh = 0; oh < g.out_h; ++oh) {
    for (Eigen::Index ow = 0; ow < g.out_w; ++ow) {
      S* row = cols.data() + (oh * g.out_w + ow) * cols.cols();
      for (Eigen::Index r = 0; r < g.kh; ++r) {
        const Eigen::Index ih = oh * g.stride - g.pad_top + r;
        if (ih < 0 || ih >= g.in_h) continue;
        for (Eigen::Index c = 0; c < g.kw; ++c) {
          const Eigen::Index iw = ow * g.stride - g.pad_left + c;
          if (iw < 0 || iw >= g.in_w) continue;
          const S* src = x + (ih * g.in_w + iw) * g.channels;
          S* dst = row + (r * g.kw + c) * g.channels;
          for (Eigen::Index ch = 0; ch < g.channels; ++ch) dst[ch] = src[ch];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds rows back onto the image plane.
template <class S>
void col2im_add(const MatrixRM<S>& cols, const ConvGeom& g, S* x) {
  for (Eigen::Index oh = 0; oh < g.out_h; ++oh) {
    for (Eigen::Index ow = 0; ow < g.out_w; ++ow) {
      const S* row = cols.data() + (oh * g.out_w + ow) * cols.cols();
      for (Eigen::Index r = 0; r < g.kh; ++r) {
        const Eigen::Index ih = oh * g.stride - g.pad_top + r;
        if (ih < 0 || ih >= g.in_h) continue;
        for (Eigen::Index c = 0; c < g.kw; ++c) {
          const Eigen::Index iw = ow * g.stride - g.pad_left + c;
          if (iw < 0 || iw >= g.in_w) continue;
          S* dst = x + (ih * g.in_w + iw) * g.channels;
          const S* src = row + (r * g.kw + c) * g.channels;
          for (Eigen::Index ch = 0; ch < g.channels; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

template <class S>
Eigen::Index batch_rows(const Tensor<S>& t) {
  return t.rank() > 1 ? t.dim(0) : 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor<S>::make_op(
      a.shape(), a.values() + b.values(), {a, b},
      [an, bn](detail::Node<S>& n) {
        detail::accumulate(*an, n.grad);
        detail::accumulate(*bn, n.grad);
      });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw DimensionError("sub: shape mismatch");
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor<S>::make_op(
      a.shape(), a.values() - b.values(), {a, b},
      [an, bn](detail::Node<S>& n) {
        detail::accumulate(*an, n.grad);
        detail::accumulate(*bn, Array<S>(-n.grad));
      });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor<S>::make_op(
      a.shape(), a.values() * b.values(), {a, b},
      [an, bn](detail::Node<S>& n) {
        detail::accumulate(*an, Array<S>(n.grad * bn->value));
        detail::accumulate(*bn, Array<S>(n.grad * an->value));
      });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  auto an = a.node_ptr();
  return Tensor<S>::make_op(
      a.shape(), Array<S>(a.values() * k), {a},
      [an, k](detail::Node<S>& n) {
        detail::accumulate(*an, Array<S>(n.grad * k));
      });
}

template <class S>
Tensor<S> exp_elem(const Tensor<S>& a) {
  auto an = a.node_ptr();
  Array<S> v = a.values().exp();
  return Tensor<S>::make_op(
      a.shape(), v, {a},
      [an](detail::Node<S>& n) {
        detail::accumulate(*an, Array<S>(n.grad * n.value));
      });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: element count mismatch");
  auto an = a.node_ptr();
  return Tensor<S>::make_op(
      std::move(shape), a.values(), {a},
      [an](detail::Node<S>& n) { detail::accumulate(*an, n.grad); });
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  auto an = a.node_ptr();
  return Tensor<S>::make_op(
      {1}, Array<S>::Constant(1, a.values().sum()), {a},
      [an](detail::Node<S>& n) {
        detail::accumulate(*an, Array<S>(Array<S>::Constant(an->value.size(), n.grad[0])));
      });
}

// Column slice of a [N, D] tensor: columns [begin, begin + count).
template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, Eigen::Index begin, Eigen::Index count) {
  if (a.rank() != 2) throw DimensionError("slice_cols expects a rank-2 tensor");
  const Eigen::Index rows = a.dim(0), cols = a.dim(1);
  if (begin < 0 || count <= 0 || begin + count > cols)
    throw DimensionError("slice_cols: column range out of bounds");
  detail::ConstMatMap<S> x(a.values().data(), rows, cols);
  MatrixRM<S> y = x.middleCols(begin, count);
  auto an = a.node_ptr();
  return Tensor<S>::make_op(
      {rows, count}, Eigen::Map<Array<S>>(y.data(), y.size()), {a},
      [an, rows, cols, begin, count](detail::Node<S>& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        detail::MatMap<S> gp(an->grad.data(), rows, cols);
        detail::ConstMatMap<S> gn(n.grad.data(), rows, count);
        gp.middleCols(begin, count) += gn;
      });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  auto an = a.node_ptr();
  Array<S> v = a.values().max(S(0));
  return Tensor<S>::make_op(
      a.shape(), v, {a},
      [an](detail::Node<S>& n) {
        // subgradient at 0 is 0
        Array<S> mask = (an->value > S(0)).template cast<S>();
        detail::accumulate(*an, Array<S>(n.grad * mask));
      });
}

template <class S>
Tensor<S> sigmoid_temperature(const Tensor<S>& a, const TemperatureConfig& cfg) {
  cfg.validate();
  const S inv_t = static_cast<S>(1.0 / cfg.T);
  Array<S> v(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const S z = a.values()[i] * inv_t;
    v[i] = z >= S(0) ? S(1) / (S(1) + std::exp(-z))
                     : std::exp(z) / (S(1) + std::exp(z));
  }
  auto an = a.node_ptr();
  return Tensor<S>::make_op(
      a.shape(), v, {a},
      [an, inv_t](detail::Node<S>& n) {
        Array<S> d = n.value * (S(1) - n.value) * inv_t;
        detail::accumulate(*an, Array<S>(n.grad * d));
      });
}

// Softmax over the last dimension with max-subtraction for stability.
template <class S>
Tensor<S> softmax_temperature(const Tensor<S>& a, const TemperatureConfig& cfg) {
  cfg.validate();
  if (a.size() == 0 || a.shape().empty())
    throw DimensionError("softmax_temperature: empty input");
  const Eigen::Index width = a.shape().back();
  const Eigen::Index rows = a.size() / width;
  const S inv_t = static_cast<S>(1.0 / cfg.T);
  Array<S> v(a.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto x = a.values().segment(r * width, width);
    Array<S> z = (x - x.maxCoeff()) * inv_t;
    Array<S> e = z.exp();
    v.segment(r * width, width) = e / e.sum();
  }
  auto an = a.node_ptr();
  return Tensor<S>::make_op(
      a.shape(), v, {a},
      [an, rows, width, inv_t](detail::Node<S>& n) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (Eigen::Index r = 0; r < rows; ++r) {
          auto q = n.value.segment(r * width, width);
          auto g = n.grad.segment(r * width, width);
          const S dot = (q * g).sum();
          an->grad.segment(r * width, width) += (q * (g - dot)) * inv_t;
        }
      });
}

// ---------------------------------------------------------------------------
// Losses (scalar outputs, mean over the batch dimension)
// ---------------------------------------------------------------------------

// Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7].
template <class S>
Tensor<S> bce_loss(const Tensor<S>& prediction, const Tensor<S>& target) {
  if (prediction.shape() != target.shape())
    throw DimensionError("bce_loss: shape mismatch");
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const S y = target.values()[i];
    if (y != S(0) && y != S(1))
      throw DomainError("bce_loss: target values must be 0 or 1");
  }
  const S eps = static_cast<S>(1e-7);
  const Eigen::Index n = prediction.size();
  Array<S> p = prediction.values().min(S(1) - eps).max(eps);
  const Array<S>& y = target.values();
  const S loss = -(y * p.log() + (S(1) - y) * (S(1) - p).log()).mean();
  auto pn = prediction.node_ptr();
  return Tensor<S>::make_op(
      {1}, Array<S>::Constant(1, loss), {prediction},
      [pn, p = std::move(p), y, n](detail::Node<S>& node) {
        // zero gradient where the clamp is active
        Array<S> inside =
            (pn->value == p).template cast<S>();
        Array<S> d = (p - y) / (p * (S(1) - p)) / static_cast<S>(n);
        detail::accumulate(*pn, Array<S>(node.grad[0] * d * inside));
      });
}

// Sum of |x - x_hat| per sample, weighted per row, mean over the batch.
template <class S>
Tensor<S> l1_loss(const Tensor<S>& x, const Tensor<S>& x_hat,
                  const Array<S>* row_weights = nullptr) {
  if (x.shape() != x_hat.shape()) throw DimensionError("l1_loss: shape mismatch");
  const Eigen::Index batch = detail::batch_rows(x);
  const Eigen::Index per = x.size() / batch;
  if (row_weights && row_weights->size() != batch)
    throw DimensionError("l1_loss: weight length must equal batch size");
  Array<S> diff = x.values() - x_hat.values();
  S total = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const S w = row_weights ? (*row_weights)[b] : S(1);
    total += w * diff.segment(b * per, per).abs().sum();
  }
  total /= static_cast<S>(batch);
  auto xn = x.node_ptr(), hn = x_hat.node_ptr();
  Array<S> w_full(x.size());
  for (Eigen::Index b = 0; b < batch; ++b)
    w_full.segment(b * per, per).setConstant(
        (row_weights ? (*row_weights)[b] : S(1)) / static_cast<S>(batch));
  return Tensor<S>::make_op(
      {1}, Array<S>::Constant(1, total), {x, x_hat},
      [xn, hn, diff = std::move(diff), w_full = std::move(w_full)](detail::Node<S>& n) {
        Array<S> s = diff.sign() * w_full * n.grad[0];
        detail::accumulate(*xn, s);
        detail::accumulate(*hn, Array<S>(-s));
      });
}

// KL divergence of N(mu, diag(exp(log_var))) from the unit Gaussian,
// summed over latent dimensions, mean over the batch.
template <class S>
Tensor<S> kl_unit_gaussian(const Tensor<S>& mu, const Tensor<S>& log_var,
                           const Array<S>* row_weights = nullptr) {
  if (mu.shape() != log_var.shape())
    throw DimensionError("kl_unit_gaussian: shape mismatch");
  const Eigen::Index batch = detail::batch_rows(mu);
  const Eigen::Index k = mu.size() / batch;
  if (row_weights && row_weights->size() != batch)
    throw DimensionError("kl_unit_gaussian: weight length must equal batch size");
  Array<S> var = log_var.values().exp();
  S total = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    auto m = mu.values().segment(b * k, k);
    auto v = var.segment(b * k, k);
    auto lv = log_var.values().segment(b * k, k);
    const S w = row_weights ? (*row_weights)[b] : S(1);
    total += w * S(0.5) * (v + m.square() - S(1) - lv).sum();
  }
  total /= static_cast<S>(batch);
  Array<S> w_full(mu.size());
  for (Eigen::Index b = 0; b < batch; ++b)
    w_full.segment(b * k, k).setConstant(
        (row_weights ? (*row_weights)[b] : S(1)) / static_cast<S>(batch));
  auto mn = mu.node_ptr(), ln = log_var.node_ptr();
  return Tensor<S>::make_op(
      {1}, Array<S>::Constant(1, total), {mu, log_var},
      [mn, ln, var = std::move(var), w_full = std::move(w_full)](detail::Node<S>& n) {
        const S g = n.grad[0];
        detail::accumulate(*mn, Array<S>(g * w_full * mn->value));
        detail::accumulate(*ln, Array<S>(g * w_full * S(0.5) * (var - S(1))));
      });
}

// ---------------------------------------------------------------------------
// Linear / convolutional layers
// ---------------------------------------------------------------------------

// Affine map: input [N, in] x weights [in, out] + bias [out].
template <class S>
Tensor<S> dense(const Tensor<S>& input, const Tensor<S>& weights,
                const Tensor<S>& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || bias.rank() != 1)
    throw DimensionError("dense: expected input [N,in], weights [in,out], bias [out]");
  const Eigen::Index n = input.dim(0), in = input.dim(1);
  const Eigen::Index out = weights.dim(1);
  if (weights.dim(0) != in || bias.dim(0) != out)
    throw DimensionError("dense: inner dimensions disagree (input " +
                         shape_str(input.shape()) + ", weights " +
                         shape_str(weights.shape()) + ")");
  detail::ConstMatMap<S> x(input.values().data(), n, in);
  detail::ConstMatMap<S> w(weights.values().data(), in, out);
  MatrixRM<S> y = x * w;
  y.rowwise() += bias.values().matrix().transpose();
  auto xn = input.node_ptr(), wn = weights.node_ptr(), bn = bias.node_ptr();
  return Tensor<S>::make_op(
      {n, out}, Eigen::Map<Array<S>>(y.data(), y.size()),
      {input, weights, bias},
      [xn, wn, bn, n, in, out](detail::Node<S>& node) {
        detail::ConstMatMap<S> gy(node.grad.data(), n, out);
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::MatMap<S> gx(xn->grad.data(), n, in);
          detail::ConstMatMap<S> w(wn->value.data(), in, out);
          gx.noalias() += gy * w.transpose();
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          detail::MatMap<S> gw(wn->grad.data(), in, out);
          detail::ConstMatMap<S> x(xn->value.data(), n, in);
          gw.noalias() += x.transpose() * gy;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          bn->grad += Array<S>(gy.colwise().sum().transpose().array());
        }
      });
}

// 2-D correlation, NHWC input [N,H,W,C], kernels [kh,kw,Cin,Cout].
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernels,
                 Eigen::Index stride, Padding padding) {
  if (input.rank() != 4 || kernels.rank() != 4)
    throw DimensionError("conv2d: input must be NHWC, kernels [kh,kw,Cin,Cout]");
  if (stride < 1) throw DimensionError("conv2d: stride must be positive");
  const Eigen::Index n = input.dim(0);
  if (kernels.dim(2) != input.dim(3))
    throw DimensionError("conv2d: channel counts disagree (input " +
                         shape_str(input.shape()) + ", kernels " +
                         shape_str(kernels.shape()) + ")");
  const auto g = detail::conv_geometry(input.dim(1), input.dim(2), input.dim(3),
                                       kernels.dim(0), kernels.dim(1), stride,
                                       padding);
  const Eigen::Index cout = kernels.dim(3);
  const Eigen::Index plane_in = g.in_h * g.in_w * g.channels;
  const Eigen::Index plane_out = g.out_h * g.out_w * cout;
  detail::ConstMatMap<S> kmat(kernels.values().data(),
                              g.kh * g.kw * g.channels, cout);
  Array<S> out(n * plane_out);
  MatrixRM<S> cols;
  for (Eigen::Index b = 0; b < n; ++b) {
    detail::im2col(input.values().data() + b * plane_in, g, cols);
    detail::MatMap<S> y(out.data() + b * plane_out, g.out_h * g.out_w, cout);
    y.noalias() = cols * kmat;
  }
  auto xn = input.node_ptr(), kn = kernels.node_ptr();
  return Tensor<S>::make_op(
      {n, g.out_h, g.out_w, cout}, std::move(out), {input, kernels},
      [xn, kn, g, n, cout, plane_in, plane_out](detail::Node<S>& node) {
        detail::ConstMatMap<S> kmat(kn->value.data(), g.kh * g.kw * g.channels,
                                    cout);
        if (xn->requires_grad) xn->ensure_grad();
        if (kn->requires_grad) kn->ensure_grad();
        MatrixRM<S> cols, dcols;
        for (Eigen::Index b = 0; b < n; ++b) {
          detail::ConstMatMap<S> gy(node.grad.data() + b * plane_out,
                                    g.out_h * g.out_w, cout);
          if (kn->requires_grad) {
            detail::im2col(xn->value.data() + b * plane_in, g, cols);
            detail::MatMap<S> gk(kn->grad.data(), g.kh * g.kw * g.channels, cout);
            gk.noalias() += cols.transpose() * gy;
          }
          if (xn->requires_grad) {
            dcols.noalias() = gy * kmat.transpose();
            detail::col2im_add(dcols, g, xn->grad.data() + b * plane_in);
          }
        }
      });
}

// Transposed convolution: adjoint of a stride-s "same" conv2d. Input
// [N,h,w,Cin], kernels [kh,kw,Cout,Cin], output [N, h*s, w*s, Cout].
template <class S>
Tensor<S> conv2d_transpose(const Tensor<S>& input, const Tensor<S>& kernels,
                           Eigen::Index stride) {
  if (input.rank() != 4 || kernels.rank() != 4)
    throw DimensionError("conv2d_transpose: input NHWC, kernels [kh,kw,Cout,Cin]");
  if (stride < 1) throw DimensionError("conv2d_transpose: stride must be positive");
  if (kernels.dim(3) != input.dim(3))
    throw DimensionError("conv2d_transpose: channel counts disagree");
  const Eigen::Index n = input.dim(0);
  const Eigen::Index cout = kernels.dim(2), cin = kernels.dim(3);
  const Eigen::Index out_h = input.dim(1) * stride;
  const Eigen::Index out_w = input.dim(2) * stride;
  // geometry of the conv this op is the adjoint of
  const auto g = detail::conv_geometry(out_h, out_w, cout, kernels.dim(0),
                                       kernels.dim(1), stride, Padding::kSame);
  const Eigen::Index plane_in = input.dim(1) * input.dim(2) * cin;
  const Eigen::Index plane_out = out_h * out_w * cout;
  detail::ConstMatMap<S> kmat(kernels.values().data(), g.kh * g.kw * cout, cin);
  Array<S> out = Array<S>::Zero(n * plane_out);
  MatrixRM<S> c;
  for (Eigen::Index b = 0; b < n; ++b) {
    detail::ConstMatMap<S> u(input.values().data() + b * plane_in,
                             input.dim(1) * input.dim(2), cin);
    c.noalias() = u * kmat.transpose();
    detail::col2im_add(c, g, out.data() + b * plane_out);
  }
  auto xn = input.node_ptr(), kn = kernels.node_ptr();
  const Eigen::Index rows = input.dim(1) * input.dim(2);
  return Tensor<S>::make_op(
      {n, out_h, out_w, cout}, std::move(out), {input, kernels},
      [xn, kn, g, n, cin, rows, plane_in, plane_out](detail::Node<S>& node) {
        detail::ConstMatMap<S> kmat(kn->value.data(), g.kh * g.kw * g.channels,
                                    cin);
        if (xn->requires_grad) xn->ensure_grad();
        if (kn->requires_grad) kn->ensure_grad();
        MatrixRM<S> gcols;
        for (Eigen::Index b = 0; b < n; ++b) {
          detail::im2col(node.grad.data() + b * plane_out, g, gcols);
          if (xn->requires_grad) {
            detail::MatMap<S> gu(xn->grad.data() + b * plane_in, rows, cin);
            gu.noalias() += gcols * kmat;
          }
          if (kn->requires_grad) {
            detail::ConstMatMap<S> u(xn->value.data() + b * plane_in, rows, cin);
            detail::MatMap<S> gk(kn->grad.data(), g.kh * g.kw * g.channels, cin);
            gk.noalias() += gcols.transpose() * u;
          }
        }
      });
}

// Adds a per-channel bias over the last dimension.
template <class S>
Tensor<S> channel_bias(const Tensor<S>& input, const Tensor<S>& bias) {
  if (bias.rank() != 1 || input.shape().empty() ||
      input.shape().back() != bias.dim(0))
    throw DimensionError("channel_bias: bias length must equal last dimension");
  const Eigen::Index c = bias.dim(0);
  const Eigen::Index rows = input.size() / c;
  Array<S> v = input.values();
  for (Eigen::Index r = 0; r < rows; ++r)
    v.segment(r * c, c) += bias.values();
  auto xn = input.node_ptr(), bn = bias.node_ptr();
  return Tensor<S>::make_op(
      input.shape(), std::move(v), {input, bias},
      [xn, bn, rows, c](detail::Node<S>& node) {
        detail::accumulate(*xn, node.grad);
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (Eigen::Index r = 0; r < rows; ++r)
            bn->grad += node.grad.segment(r * c, c);
        }
      });
}

}  // namespace sbr
