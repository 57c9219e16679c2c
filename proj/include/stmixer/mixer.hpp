#pragma once

#include <string>
#include <utility>

#include "stmixer/nn.hpp"

namespace stmixer {

enum class MixingStrategy { kDual, kSpatialOnly, kTemporalOnly, kFixedParams };

inline MixingStrategy mixing_strategy_from(const std::string& s) {
  if (s == "dual") return MixingStrategy::kDual;
  if (s == "spatial_only") return MixingStrategy::kSpatialOnly;
  if (s == "temporal_only") return MixingStrategy::kTemporalOnly;
  if (s == "fixed_params") return MixingStrategy::kFixedParams;
  throw ConfigError("unknown mixing strategy '" + s +
                    "' (want dual|spatial_only|temporal_only|fixed_params)");
}

/// One mixing branch: channel mixing then point mixing with query-generated
/// weights, applied group-wise.
///
///   CM  = ReLU(LayerNorm(pool(F) x M_c))      M_c: [dg, dg] per group
///   PCM = ReLU(LayerNorm(CM^T x M_p))          M_p: [points, out] per group
///
/// PCM is flattened over groups, projected to D and residual-added to the
/// query, then normalized. The generators are the only query dependence:
/// with zero generator weights only their biases act, which is exactly the
/// fixed-parameter ablation.
class MixerBranch {
 public:
  MixerBranch() = default;
  MixerBranch(const std::string& name, int64_t d, int64_t groups, int64_t points_in,
              int64_t points_out, Rng& rng)
      : d_(d), groups_(groups), dg_(d / groups), pin_(points_in), pout_(points_out) {
    if (d % groups != 0)
      throw ConfigError("mixer '" + name + "': D=" + std::to_string(d) +
                        " not divisible into " + std::to_string(groups) + " groups");
    gen_channel_ = Linear(name + ".gen_mc", d, groups * dg_ * dg_, rng, 0.01);
    gen_point_ = Linear(name + ".gen_mp", d, groups * pin_ * pout_, rng, 0.01);
    // Bias the channel generator toward identity mixing.
    double* b = gen_channel_.b.value.data();
    for (int64_t g = 0; g < groups; ++g)
      for (int64_t i = 0; i < dg_; ++i) b[(g * dg_ + i) * dg_ + i] = 1.0;
    ln_channel_ = LayerNormBlock(name + ".ln_mc", dg_);
    ln_point_ = LayerNormBlock(name + ".ln_mp", pout_);
    out_proj_ = Linear(name + ".out", groups * dg_ * pout_, d, rng, -1.0, /*zero_init=*/true);
    ln_out_ = LayerNormBlock(name + ".ln_out", d);
  }

  /// queries: [N, D]; pooled: [N, G, points_in, dg]. adaptive=false uses
  /// only the generator biases (query-independent mixing weights).
  Tensor forward(const Tensor& queries, const Tensor& pooled, bool adaptive) const {
    int64_t n = queries.dim(0);
    if (pooled.rank() != 4 || pooled.dim(0) != n || pooled.dim(1) != groups_ ||
        pooled.dim(2) != pin_ || pooled.dim(3) != dg_)
      throw DimensionError("mixer: pooled features " + shape_str(pooled.shape()) +
                           " do not match [N," + std::to_string(groups_) + "," +
                           std::to_string(pin_) + "," + std::to_string(dg_) + "]");
    Tensor mc, mp;
    if (adaptive) {
      mc = reshape(gen_channel_.forward(queries), {n * groups_, dg_, dg_});
      mp = reshape(gen_point_.forward(queries), {n * groups_, pin_, pout_});
    } else {
      Tensor mc1 = reshape(gen_channel_.b.value, {1, groups_, dg_, dg_});
      Tensor mp1 = reshape(gen_point_.b.value, {1, groups_, pin_, pout_});
      mc = reshape(concat(std::vector<Tensor>(size_t(n), mc1), 0), {n * groups_, dg_, dg_});
      mp = reshape(concat(std::vector<Tensor>(size_t(n), mp1), 0), {n * groups_, pin_, pout_});
    }
    Tensor x = reshape(pooled, {n * groups_, pin_, dg_});
    Tensor cm = relu(ln_channel_.forward(bmm(x, mc)));          // [N*G, pin, dg]
    Tensor cmt = permute(cm, {0, 2, 1});                        // [N*G, dg, pin]
    Tensor pcm = relu(ln_point_.forward(bmm(cmt, mp)));         // [N*G, dg, pout]
    Tensor flat = reshape(pcm, {n, groups_ * dg_ * pout_});
    return ln_out_.forward(add(queries, out_proj_.forward(flat)));
  }

  void visit(const ParamVisitor& v) {
    gen_channel_.visit(v);
    gen_point_.visit(v);
    ln_channel_.visit(v);
    ln_point_.visit(v);
    out_proj_.visit(v);
    ln_out_.visit(v);
  }

  int64_t points_in() const { return pin_; }
  int64_t points_out() const { return pout_; }

 private:
  int64_t d_ = 0, groups_ = 0, dg_ = 0, pin_ = 0, pout_ = 0;
  Linear gen_channel_, gen_point_;
  LayerNormBlock ln_channel_, ln_point_;
  Linear out_proj_;
  LayerNormBlock ln_out_;
};

/// Dual-branch adaptive mixing: the spatial branch pools over time and
/// mixes the P_in sampled points; the temporal branch pools over points
/// and mixes the T frames. Single-branch modes leave the other query block
/// untouched (bitwise).
class MixerBlock {
 public:
  MixerBlock() = default;
  MixerBlock(const std::string& name, int64_t d, int64_t groups, int64_t p_in, int64_t p_out,
             int64_t t, int64_t t_out, Rng& rng)
      : spatial_(name + ".spatial", d, groups, p_in, p_out, rng),
        temporal_(name + ".temporal", d, groups, t, t_out, rng) {}

  /// F: [N, G, T, P_in, dg] sampled features.
  std::pair<Tensor, Tensor> mix(const Tensor& qs, const Tensor& qt, const Tensor& f,
                                MixingStrategy strategy) const {
    bool adaptive = strategy != MixingStrategy::kFixedParams;
    switch (strategy) {
      case MixingStrategy::kDual:
      case MixingStrategy::kFixedParams: {
        Tensor qs2 = spatial_.forward(qs, mean_axis(f, 2), adaptive);
        Tensor qt2 = temporal_.forward(qt, mean_axis(f, 3), adaptive);
        return {qs2, qt2};
      }
      case MixingStrategy::kSpatialOnly:
        return {spatial_.forward(qs, mean_axis(f, 2), true), qt};
      case MixingStrategy::kTemporalOnly:
        return {qs, temporal_.forward(qt, mean_axis(f, 3), true)};
    }
    throw ConfigError("mix: unknown strategy");
  }

  const MixerBranch& spatial() const { return spatial_; }
  const MixerBranch& temporal() const { return temporal_; }

  void visit(const ParamVisitor& v) {
    spatial_.visit(v);
    temporal_.visit(v);
  }

 private:
  MixerBranch spatial_;
  MixerBranch temporal_;
};

}  // namespace stmixer
