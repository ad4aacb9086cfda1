#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "taggant/dual.hpp"

namespace taggant {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// 3x3, stride 2, zero-padding 1 convolution over a (channels x H*W) map whose
/// spatial index is h + w*H (column-major, like the feature matrix).
struct ConvGeometry {
  int in_channels, out_channels;
  int in_h, in_w, out_h, out_w;

  Eigen::Index patch_size() const { return Eigen::Index(in_channels) * 9; }
  Eigen::Index in_pixels() const { return Eigen::Index(in_h) * in_w; }
  Eigen::Index out_pixels() const { return Eigen::Index(out_h) * out_w; }
};

struct TensorSlot {
  std::string name;
  std::vector<Eigen::Index> shape;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

/// Small spectrogram CNN: strided SiLU conv stack, one SiLU hidden layer, linear head.
struct ArchSpec {
  int n_mels = 64;
  int n_frames = 98;
  int num_classes = 10;
  std::vector<int> channels{8, 16, 32, 32};
  int hidden = 128;

  std::vector<ConvGeometry> conv_geometry() const;
  Eigen::Index flat_size() const;
  std::vector<TensorSlot> layout() const;
  Eigen::Index parameter_count() const;
  std::string descriptor() const;

  bool operator==(const ArchSpec&) const = default;
};

namespace nn {

template <typename Scalar>
Scalar sigmoid(const Scalar& z) {
  using std::exp;
  return Scalar(1.0) / (Scalar(1.0) + exp(-z));
}

template <typename Scalar>
Scalar silu(const Scalar& z) {
  return z * sigmoid(z);
}

template <typename Scalar>
Scalar silu_grad(const Scalar& z) {
  const Scalar s = sigmoid(z);
  return s * (Scalar(1.0) + z * (Scalar(1.0) - s));
}

template <typename Scalar>
void im2col(const MatX<Scalar>& in, const ConvGeometry& g, MatX<Scalar>& cols) {
  cols.setZero(g.patch_size(), g.out_pixels());
  for (int wo = 0; wo < g.out_w; ++wo) {
    for (int ho = 0; ho < g.out_h; ++ho) {
      const Eigen::Index p = ho + Eigen::Index(wo) * g.out_h;
      for (int kw = 0; kw < 3; ++kw) {
        const int iw = 2 * wo - 1 + kw;
        if (iw < 0 || iw >= g.in_w) continue;
        for (int kh = 0; kh < 3; ++kh) {
          const int ih = 2 * ho - 1 + kh;
          if (ih < 0 || ih >= g.in_h) continue;
          const Eigen::Index q = ih + Eigen::Index(iw) * g.in_h;
          for (int c = 0; c < g.in_channels; ++c) cols(Eigen::Index(c) * 9 + kh * 3 + kw, p) = in(c, q);
        }
      }
    }
  }
}

// Adjoint of im2col.
template <typename Scalar>
void col2im(const MatX<Scalar>& cols, const ConvGeometry& g, MatX<Scalar>& in) {
  in.setZero(g.in_channels, g.in_pixels());
  for (int wo = 0; wo < g.out_w; ++wo) {
    for (int ho = 0; ho < g.out_h; ++ho) {
      const Eigen::Index p = ho + Eigen::Index(wo) * g.out_h;
      for (int kw = 0; kw < 3; ++kw) {
        const int iw = 2 * wo - 1 + kw;
        if (iw < 0 || iw >= g.in_w) continue;
        for (int kh = 0; kh < 3; ++kh) {
          const int ih = 2 * ho - 1 + kh;
          if (ih < 0 || ih >= g.in_h) continue;
          const Eigen::Index q = ih + Eigen::Index(iw) * g.in_h;
          for (int c = 0; c < g.in_channels; ++c) in(c, q) += cols(Eigen::Index(c) * 9 + kh * 3 + kw, p);
        }
      }
    }
  }
}

}  // namespace nn

/// Intermediate values kept by network_forward() for the reverse pass.
template <typename Scalar>
struct Activations {
  std::vector<MatX<Scalar>> cols;  // im2col input of each conv layer
  std::vector<MatX<Scalar>> pre;   // conv pre-activations
  VecX<Scalar> flat, hidden_pre, hidden, logits;
};

/// Logits for one (n_mels x n_frames) feature map. `params` is the flat
/// parameter vector in ArchSpec::layout() order.
template <typename Scalar>
VecX<Scalar> network_forward(const ArchSpec& arch, const VecX<Scalar>& params, const MatX<Scalar>& features,
                             Activations<Scalar>* cache = nullptr) {
  const auto geometry = arch.conv_geometry();
  Activations<Scalar> local;
  Activations<Scalar>& act = cache ? *cache : local;
  act.cols.resize(geometry.size());
  act.pre.resize(geometry.size());

  MatX<Scalar> a = Eigen::Map<const MatX<Scalar>>(features.data(), 1, features.size());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < geometry.size(); ++l) {
    const ConvGeometry& g = geometry[l];
    Eigen::Map<const MatX<Scalar>> w(params.data() + off, g.out_channels, g.patch_size());
    off += w.size();
    Eigen::Map<const VecX<Scalar>> b(params.data() + off, g.out_channels);
    off += b.size();
    nn::im2col(a, g, act.cols[l]);
    act.pre[l].noalias() = w * act.cols[l];
    act.pre[l].colwise() += b;
    a = act.pre[l].unaryExpr([](const Scalar& z) { return nn::silu(z); });
  }
  act.flat = Eigen::Map<const VecX<Scalar>>(a.data(), a.size());

  const Eigen::Index flat = arch.flat_size();
  Eigen::Map<const MatX<Scalar>> w1(params.data() + off, arch.hidden, flat);
  off += w1.size();
  Eigen::Map<const VecX<Scalar>> b1(params.data() + off, arch.hidden);
  off += b1.size();
  Eigen::Map<const MatX<Scalar>> w2(params.data() + off, arch.num_classes, arch.hidden);
  off += w2.size();
  Eigen::Map<const VecX<Scalar>> b2(params.data() + off, arch.num_classes);

  act.hidden_pre.noalias() = w1 * act.flat;
  act.hidden_pre += b1;
  act.hidden = act.hidden_pre.unaryExpr([](const Scalar& z) { return nn::silu(z); });
  act.logits.noalias() = w2 * act.hidden;
  act.logits += b2;
  return act.logits;
}

/// Reverse pass from dL/dlogits. Either output may be null; skipping
/// `dparams` avoids every weight-gradient product.
template <typename Scalar>
void network_backward(const ArchSpec& arch, const VecX<Scalar>& params, const Activations<Scalar>& act,
                      const VecX<Scalar>& dlogits, VecX<Scalar>* dparams, MatX<Scalar>* dfeatures) {
  const auto geometry = arch.conv_geometry();
  const auto layout = arch.layout();
  if (dparams) dparams->setZero(params.size());
  const auto slot = [&](std::size_t i) { return layout[i]; };

  const std::size_t n_conv = geometry.size();
  const TensorSlot s_w1 = slot(2 * n_conv), s_b1 = slot(2 * n_conv + 1);
  const TensorSlot s_w2 = slot(2 * n_conv + 2), s_b2 = slot(2 * n_conv + 3);
  Eigen::Map<const MatX<Scalar>> w1(params.data() + s_w1.offset, arch.hidden, arch.flat_size());
  Eigen::Map<const MatX<Scalar>> w2(params.data() + s_w2.offset, arch.num_classes, arch.hidden);

  if (dparams) {
    Eigen::Map<MatX<Scalar>>(dparams->data() + s_w2.offset, arch.num_classes, arch.hidden).noalias() =
        dlogits * act.hidden.transpose();
    Eigen::Map<VecX<Scalar>>(dparams->data() + s_b2.offset, arch.num_classes) = dlogits;
  }
  VecX<Scalar> dh = w2.transpose() * dlogits;
  for (Eigen::Index i = 0; i < dh.size(); ++i) dh[i] *= nn::silu_grad(act.hidden_pre[i]);
  if (dparams) {
    Eigen::Map<MatX<Scalar>>(dparams->data() + s_w1.offset, arch.hidden, arch.flat_size()).noalias() =
        dh * act.flat.transpose();
    Eigen::Map<VecX<Scalar>>(dparams->data() + s_b1.offset, arch.hidden) = dh;
  }
  VecX<Scalar> dflat = w1.transpose() * dh;
  const ConvGeometry& last = geometry.back();
  MatX<Scalar> da = Eigen::Map<const MatX<Scalar>>(dflat.data(), last.out_channels, last.out_pixels());

  for (std::size_t l = n_conv; l-- > 0;) {
    const ConvGeometry& g = geometry[l];
    const TensorSlot sw = slot(2 * l), sb = slot(2 * l + 1);
    MatX<Scalar> dz = da;
    const MatX<Scalar>& pre = act.pre[l];
    for (Eigen::Index i = 0; i < dz.size(); ++i) dz.data()[i] *= nn::silu_grad(pre.data()[i]);
    if (dparams) {
      Eigen::Map<MatX<Scalar>>(dparams->data() + sw.offset, g.out_channels, g.patch_size()).noalias() =
          dz * act.cols[l].transpose();
      Eigen::Map<VecX<Scalar>>(dparams->data() + sb.offset, g.out_channels) = dz.rowwise().sum();
    }
    if (l == 0 && !dfeatures) break;
    Eigen::Map<const MatX<Scalar>> w(params.data() + sw.offset, g.out_channels, g.patch_size());
    MatX<Scalar> dcols = w.transpose() * dz;
    nn::col2im(dcols, g, da);
  }
  if (dfeatures) {
    *dfeatures = Eigen::Map<const MatX<Scalar>>(da.data(), arch.n_mels, arch.n_frames);
  }
}

/// Softmax cross-entropy against a probability vector; returns the loss and
/// writes dL/dlogits.
template <typename Scalar>
Scalar soft_cross_entropy(const VecX<Scalar>& logits, const Eigen::VectorXd& target, VecX<Scalar>& dlogits) {
  using std::exp;
  using std::log;
  Scalar peak = logits[0];
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > peak) peak = logits[i];
  VecX<Scalar> e(logits.size());
  Scalar sum(0.0);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    e[i] = exp(logits[i] - peak);
    sum += e[i];
  }
  const Scalar log_z = peak + log(sum);
  Scalar loss(0.0);
  dlogits.resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    dlogits[i] = e[i] / sum - Scalar(target[i]);
    if (target[i] != 0.0) loss += Scalar(target[i]) * (log_z - logits[i]);
  }
  return loss;
}

}  // namespace taggant
