#pragma once

#include <functional>
#include <string>

#include "stmixer/conv.hpp"
#include "stmixer/optim.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

using ParamVisitor = std::function<void(Parameter&)>;

/// Affine map over the last axis. Inputs of any rank are treated as
/// [rows, in].
struct Linear {
  Parameter w;  // [in, out]
  Parameter b;  // [out]

  Linear() = default;
  Linear(const std::string& name, int64_t in, int64_t out, Rng& rng, double weight_std = -1.0,
         bool zero_init = false) {
    double std = weight_std >= 0.0 ? weight_std : 1.0 / std::sqrt(double(in));
    Tensor wv = zero_init ? Tensor::zeros({in, out}) : Tensor::randn({in, out}, rng, std);
    w = Parameter(name + ".w", std::move(wv));
    b = Parameter(name + ".b", Tensor::zeros({out}));
  }

  int64_t in_features() const { return w.value.dim(0); }
  int64_t out_features() const { return w.value.dim(1); }

  Tensor forward(const Tensor& x) const {
    int64_t in = in_features();
    if (x.shape().back() != in)
      throw DimensionError("linear '" + w.name + "': input " + shape_str(x.shape()) +
                           " does not end in " + std::to_string(in));
    Shape lead(x.shape().begin(), x.shape().end() - 1);
    Tensor flat = reshape(x, {x.numel() / in, in});
    Tensor y = add_lastaxis(matmul(flat, w.value), b.value);
    lead.push_back(out_features());
    return reshape(y, lead);
  }

  void visit(const ParamVisitor& v) {
    v(w);
    v(b);
  }
};

struct LayerNormBlock {
  Parameter gain;
  Parameter bias;
  double eps = 1e-5;

  LayerNormBlock() = default;
  LayerNormBlock(const std::string& name, int64_t d) {
    gain = Parameter(name + ".gain", Tensor::filled({d}, 1.0));
    bias = Parameter(name + ".bias", Tensor::zeros({d}));
  }

  Tensor forward(const Tensor& x) const { return layernorm(x, gain.value, bias.value, eps); }

  void visit(const ParamVisitor& v) {
    v(gain);
    v(bias);
  }
};

/// Two-layer MLP with ReLU. The final layer can be zero-initialized so the
/// block starts as an exact no-op contribution.
struct Ffn {
  Linear fc1, fc2;

  Ffn() = default;
  Ffn(const std::string& name, int64_t in, int64_t hidden, int64_t out, Rng& rng,
      bool zero_init_last = false)
      : fc1(name + ".fc1", in, hidden, rng),
        fc2(name + ".fc2", hidden, out, rng, -1.0, zero_init_last) {}

  Tensor forward(const Tensor& x) const { return fc2.forward(relu(fc1.forward(x))); }

  void visit(const ParamVisitor& v) {
    fc1.visit(v);
    fc2.visit(v);
  }
};

/// Multi-head attention built from matmul/softmax primitives. The optional
/// mask is a [Nk] vector added to every row of scores (0 to keep, -inf to
/// exclude a key); exp(-inf) underflows to exactly zero weight.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 4;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int64_t d, int h, Rng& rng)
      : wq(name + ".wq", d, d, rng),
        wk(name + ".wk", d, d, rng),
        wv(name + ".wv", d, d, rng),
        wo(name + ".wo", d, d, rng),
        heads(h) {
    if (d % h != 0)
      throw ConfigError("attention '" + name + "': width " + std::to_string(d) +
                        " not divisible by " + std::to_string(h) + " heads");
  }

  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const Tensor& mask = Tensor()) const {
    int64_t d = wq.in_features();
    int64_t nq = q_in.dim(0), nk = kv_in.dim(0);
    int64_t dh = d / heads;
    auto split = [&](const Tensor& x, int64_t n) {
      return permute(reshape(x, {n, heads, dh}), {1, 0, 2});  // [H, n, dh]
    };
    Tensor qh = split(wq.forward(q_in), nq);
    Tensor kh = split(wk.forward(kv_in), nk);
    Tensor vh = split(wv.forward(kv_in), nk);
    Tensor scores = mul_scalar(bmm(qh, permute(kh, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
    if (mask.defined()) scores = add_lastaxis(scores, mask);
    Tensor attn = softmax_lastaxis(scores);           // [H, nq, nk]
    Tensor mixed = bmm(attn, vh);                     // [H, nq, dh]
    Tensor merged = reshape(permute(mixed, {1, 0, 2}), {nq, d});
    return wo.forward(merged);
  }

  void visit(const ParamVisitor& v) {
    wq.visit(v);
    wk.visit(v);
    wv.visit(v);
    wo.visit(v);
  }
};

/// Pre-residual self-attention block: LN(x + MHA(x, x)).
struct SelfAttentionBlock {
  MultiHeadAttention mha;
  LayerNormBlock ln;

  SelfAttentionBlock() = default;
  SelfAttentionBlock(const std::string& name, int64_t d, int heads, Rng& rng)
      : mha(name + ".mha", d, heads, rng), ln(name + ".ln", d) {}

  Tensor forward(const Tensor& x) const { return ln.forward(add(x, mha.forward(x, x))); }

  void visit(const ParamVisitor& v) {
    mha.visit(v);
    ln.visit(v);
  }
};

struct Conv3dLayer {
  Parameter w;  // [Co, Ci, kT, kH, kW]
  Parameter b;  // [Co]
  int stride = 1;
  int pad = 0;

  Conv3dLayer() = default;
  Conv3dLayer(const std::string& name, int64_t ci, int64_t co, int64_t kt, int64_t k, int s, int p,
              Rng& rng)
      : stride(s), pad(p) {
    double std = 1.0 / std::sqrt(double(ci * kt * k * k));
    w = Parameter(name + ".w", Tensor::randn({co, ci, kt, k, k}, rng, std));
    b = Parameter(name + ".b", Tensor::zeros({co}));
  }

  Tensor forward(const Tensor& x) const { return conv3d(x, w.value, b.value, stride, pad); }

  void visit(const ParamVisitor& v) {
    v(w);
    v(b);
  }
};

struct ConvTranspose3dLayer {
  Parameter w;  // [Co, Ci, 1, k, k]
  Parameter b;
  int stride = 1;

  ConvTranspose3dLayer() = default;
  ConvTranspose3dLayer(const std::string& name, int64_t ci, int64_t co, int64_t k, int s, Rng& rng)
      : stride(s) {
    double std = 1.0 / std::sqrt(double(ci * k * k));
    w = Parameter(name + ".w", Tensor::randn({co, ci, 1, k, k}, rng, std));
    b = Parameter(name + ".b", Tensor::zeros({co}));
  }

  Tensor forward(const Tensor& x) const { return conv_transpose3d(x, w.value, b.value, stride); }

  void visit(const ParamVisitor& v) {
    v(w);
    v(b);
  }
};

}  // namespace stmixer
