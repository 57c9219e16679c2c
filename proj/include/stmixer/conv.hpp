#pragma once

#include "stmixer/tensor.hpp"

namespace stmixer {

/// 3D convolution over [C_in, T, H, W] video volumes with kernel
/// [C_out, C_in, kT, kH, kW]. The temporal axis is stride-1 with same
/// padding (kT odd), so T is always preserved; the spatial axes share one
/// stride and padding. Output height is floor((h + 2*pad - k) / stride) + 1.
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride_spatial,
                     int pad_spatial) {
  if (x.rank() != 4) throw DimensionError("conv3d: input must be [C,T,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 5) throw DimensionError("conv3d: kernel must be [Co,Ci,kT,kH,kW], got " + shape_str(w.shape()));
  int64_t ci = x.dim(0), t = x.dim(1), h = x.dim(2), ww = x.dim(3);
  int64_t co = w.dim(0), wci = w.dim(1), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  if (ci != wci)
    throw DimensionError("conv3d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
  if (kt % 2 == 0) throw GeometryError("conv3d: temporal kernel extent must be odd");
  if (stride_spatial < 1 || pad_spatial < 0) throw GeometryError("conv3d: bad stride/padding");
  if (kh > h + 2 * pad_spatial || kw > ww + 2 * pad_spatial || kt > t + (kt - 1))
    throw GeometryError("conv3d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                        shape_str(x.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
    throw DimensionError("conv3d: bias must be [C_out]");
  int64_t s = stride_spatial, p = pad_spatial;
  int64_t oh = (h + 2 * p - kh) / s + 1;
  int64_t ow = (ww + 2 * p - kw) / s + 1;
  int64_t pt = (kt - 1) / 2;
  Tensor out = Tensor::zeros({co, t, oh, ow});
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (int64_t oc = 0; oc < co; ++oc) {
    double b = bias.defined() ? bias.data()[oc] : 0.0;
    for (int64_t tt = 0; tt < t; ++tt)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = b;
          for (int64_t ic = 0; ic < ci; ++ic)
            for (int64_t dt = 0; dt < kt; ++dt) {
              int64_t it = tt + dt - pt;
              if (it < 0 || it >= t) continue;
              for (int64_t dy = 0; dy < kh; ++dy) {
                int64_t iy = oy * s + dy - p;
                if (iy < 0 || iy >= h) continue;
                for (int64_t dx = 0; dx < kw; ++dx) {
                  int64_t ix = ox * s + dx - p;
                  if (ix < 0 || ix >= ww) continue;
                  acc += px[((ic * t + it) * h + iy) * ww + ix] *
                         pw[(((oc * ci + ic) * kt + dt) * kh + dy) * kw + dx];
                }
              }
            }
          po[((oc * t + tt) * oh + oy) * ow + ox] = acc;
        }
  }
  std::vector<Tensor> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  detail::wire(out, parents, [ci, t, h, ww, co, kt, kh, kw, s, p, oh, ow, pt](TensorNode& n) {
    auto& X = *n.parents[0];
    auto& W = *n.parents[1];
    TensorNode* B = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
    for (int64_t oc = 0; oc < co; ++oc)
      for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            double g = n.grad[size_t(((oc * t + tt) * oh + oy) * ow + ox)];
            if (g == 0.0) continue;
            if (B && B->requires_grad) B->grad[size_t(oc)] += g;
            for (int64_t ic = 0; ic < ci; ++ic)
              for (int64_t dt = 0; dt < kt; ++dt) {
                int64_t it = tt + dt - pt;
                if (it < 0 || it >= t) continue;
                for (int64_t dy = 0; dy < kh; ++dy) {
                  int64_t iy = oy * s + dy - p;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t dx = 0; dx < kw; ++dx) {
                    int64_t ix = ox * s + dx - p;
                    if (ix < 0 || ix >= ww) continue;
                    size_t xi = size_t(((ic * t + it) * h + iy) * ww + ix);
                    size_t wi = size_t((((oc * ci + ic) * kt + dt) * kh + dy) * kw + dx);
                    if (X.requires_grad) X.grad[xi] += g * W.data[wi];
                    if (W.requires_grad) W.grad[wi] += g * X.data[xi];
                  }
                }
              }
          }
  });
  return out;
}

/// Transposed spatial convolution (deconvolution) with kernel
/// [C_out, C_in, 1, k, k], stride s and no padding: h' = (h-1)*s + k.
/// Used by the plain-backbone upsampling heads.
inline Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
  if (x.rank() != 4 || w.rank() != 5)
    throw DimensionError("conv_transpose3d: want [C,T,H,W] and [Co,Ci,1,k,k]");
  int64_t ci = x.dim(0), t = x.dim(1), h = x.dim(2), ww = x.dim(3);
  int64_t co = w.dim(0), wci = w.dim(1), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  if (ci != wci || kt != 1)
    throw DimensionError("conv_transpose3d: kernel " + shape_str(w.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  if (stride < 1) throw GeometryError("conv_transpose3d: bad stride");
  int64_t s = stride;
  int64_t oh = (h - 1) * s + kh;
  int64_t ow = (ww - 1) * s + kw;
  Tensor out = Tensor::zeros({co, t, oh, ow});
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (int64_t oc = 0; oc < co; ++oc) {
    if (bias.defined()) {
      double b = bias.data()[oc];
      for (int64_t i = 0; i < t * oh * ow; ++i) po[oc * t * oh * ow + i] = b;
    }
    for (int64_t ic = 0; ic < ci; ++ic)
      for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t iy = 0; iy < h; ++iy)
          for (int64_t ix = 0; ix < ww; ++ix) {
            double v = px[((ic * t + tt) * h + iy) * ww + ix];
            for (int64_t dy = 0; dy < kh; ++dy)
              for (int64_t dx = 0; dx < kw; ++dx)
                po[((oc * t + tt) * oh + iy * s + dy) * ow + ix * s + dx] +=
                    v * pw[((oc * ci + ic) * kh + dy) * kw + dx];
          }
  }
  std::vector<Tensor> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  detail::wire(out, parents, [ci, t, h, ww, co, kh, kw, s, oh, ow](TensorNode& n) {
    auto& X = *n.parents[0];
    auto& W = *n.parents[1];
    TensorNode* B = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
    if (B && B->requires_grad) {
      for (int64_t oc = 0; oc < co; ++oc)
        for (int64_t i = 0; i < t * oh * ow; ++i) B->grad[size_t(oc)] += n.grad[size_t(oc * t * oh * ow + i)];
    }
    for (int64_t oc = 0; oc < co; ++oc)
      for (int64_t ic = 0; ic < ci; ++ic)
        for (int64_t tt = 0; tt < t; ++tt)
          for (int64_t iy = 0; iy < h; ++iy)
            for (int64_t ix = 0; ix < ww; ++ix) {
              size_t xi = size_t(((ic * t + tt) * h + iy) * ww + ix);
              for (int64_t dy = 0; dy < kh; ++dy)
                for (int64_t dx = 0; dx < kw; ++dx) {
                  size_t oi = size_t(((oc * t + tt) * oh + iy * s + dy) * ow + ix * s + dx);
                  size_t wi = size_t(((oc * ci + ic) * kh + dy) * kw + dx);
                  if (X.requires_grad) X.grad[xi] += n.grad[oi] * W.data[wi];
                  if (W.requires_grad) W.grad[wi] += n.grad[oi] * X.data[xi];
                }
            }
  });
  return out;
}

/// Nearest-neighbor upsampling of the last two axes by an integer factor.
/// Source index convention: src = floor(dst / factor).
inline Tensor nearest_upsample2d(const Tensor& x, int factor) {
  if (factor < 1) throw GeometryError("nearest_upsample2d: factor must be >= 1");
  if (x.rank() < 2) throw DimensionError("nearest_upsample2d: rank must be >= 2");
  const Shape& s = x.shape();
  int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  int64_t outer = x.numel() / (h * w);
  Shape os = s;
  os[s.size() - 2] = h * factor;
  os[s.size() - 1] = w * factor;
  int64_t oh = h * factor, ow = w * factor;
  Tensor out = Tensor::uninit(os);
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        po[(o * oh + i) * ow + j] = px[(o * h + i / factor) * w + j / factor];
  detail::wire(out, {x}, [outer, h, w, oh, ow, factor](TensorNode& n) {
    auto& X = *n.parents[0];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j)
          X.grad[size_t((o * h + i / factor) * w + j / factor)] +=
              n.grad[size_t((o * oh + i) * ow + j)];
  });
  return out;
}

}  // namespace stmixer
