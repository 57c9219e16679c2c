#pragma once

#include <string>
#include <vector>

#include "stmixer/nn.hpp"

namespace stmixer {

/// Feature maps X_z for z in {2..5}: maps[i] holds scale z = i + 2 with
/// spatial downsampling rate 2^z and the input's temporal length T.
struct PyramidMaps {
  std::vector<Tensor> maps;

  static constexpr int kZMin = 2;
  static constexpr int kZMax = 5;

  int64_t channels(int level) const { return maps[size_t(level)].dim(0); }
};

enum class BackboneKind { kHierarchical, kPlain };

inline BackboneKind backbone_kind_from(const std::string& s) {
  if (s == "hierarchical") return BackboneKind::kHierarchical;
  if (s == "plain") return BackboneKind::kPlain;
  throw ConfigError("unknown backbone '" + s + "' (want hierarchical|plain)");
}

namespace detail {

inline void check_video(const Tensor& video) {
  if (video.rank() != 4) throw DimensionError("backbone: video must be [C,T,H,W]");
  int64_t h = video.dim(2), w = video.dim(3);
  if (h % 32 != 0 || w % 32 != 0)
    throw GeometryError("backbone: frame size " + std::to_string(h) + "x" + std::to_string(w) +
                        " must be divisible by 32");
}

}  // namespace detail

/// Conv-stage analogue: a stride-4 stem (1x5x5) followed by three stride-2
/// stages (1x3x3); channels double per stage from a small base width. All
/// temporal kernels have extent 1 so T is preserved at every level.
class HierarchicalBackbone {
 public:
  HierarchicalBackbone() = default;
  HierarchicalBackbone(const std::string& name, int64_t in_channels, int64_t base, Rng& rng)
      : stem_(name + ".stem", in_channels, base, 1, 5, 4, 2, rng),
        stage3_(name + ".stage3", base, base * 2, 1, 3, 2, 1, rng),
        stage4_(name + ".stage4", base * 2, base * 4, 1, 3, 2, 1, rng),
        stage5_(name + ".stage5", base * 4, base * 8, 1, 3, 2, 1, rng),
        base_(base) {}

  PyramidMaps forward(const Tensor& video) const {
    detail::check_video(video);
    PyramidMaps out;
    Tensor x2 = relu(stem_.forward(video));
    Tensor x3 = relu(stage3_.forward(x2));
    Tensor x4 = relu(stage4_.forward(x3));
    Tensor x5 = relu(stage5_.forward(x4));
    out.maps = {x2, x3, x4, x5};
    return out;
  }

  std::vector<int64_t> out_channels() const { return {base_, base_ * 2, base_ * 4, base_ * 8}; }

  void visit(const ParamVisitor& v) {
    stem_.visit(v);
    stage3_.visit(v);
    stage4_.visit(v);
    stage5_.visit(v);
  }

 private:
  Conv3dLayer stem_, stage3_, stage4_, stage5_;
  int64_t base_ = 0;
};

/// ViT-path analogue: one stride-16 patchify trunk, then four heads of
/// spatial strides {1/4, 1/2, 1, 2} (fractional strides are transposed
/// convolutions) emitting the same channel count at every level.
class PlainBackbone {
 public:
  PlainBackbone() = default;
  PlainBackbone(const std::string& name, int64_t in_channels, int64_t trunk_channels, Rng& rng)
      : trunk_(name + ".trunk", in_channels, trunk_channels, 1, 16, 16, 0, rng),
        up4_(name + ".up4", trunk_channels, trunk_channels, 4, 4, rng),
        up2_(name + ".up2", trunk_channels, trunk_channels, 2, 2, rng),
        same_(name + ".same", trunk_channels, trunk_channels, 1, 3, 1, 1, rng),
        down2_(name + ".down2", trunk_channels, trunk_channels, 1, 3, 2, 1, rng),
        trunk_channels_(trunk_channels) {}

  PyramidMaps forward(const Tensor& video) const {
    detail::check_video(video);
    PyramidMaps out;
    Tensor trunk = relu(trunk_.forward(video));  // downsampling rate 2^4
    out.maps = {up4_.forward(trunk), up2_.forward(trunk), same_.forward(trunk),
                down2_.forward(trunk)};
    return out;
  }

  std::vector<int64_t> out_channels() const {
    return {trunk_channels_, trunk_channels_, trunk_channels_, trunk_channels_};
  }

  void visit(const ParamVisitor& v) {
    trunk_.visit(v);
    up4_.visit(v);
    up2_.visit(v);
    same_.visit(v);
    down2_.visit(v);
  }

 private:
  Conv3dLayer trunk_;
  ConvTranspose3dLayer up4_, up2_;
  Conv3dLayer same_, down2_;
  int64_t trunk_channels_ = 0;
};

/// Either backbone behind one interface; the two are drop-in
/// interchangeable for every downstream module.
class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneKind kind, const std::string& name, int64_t in_channels, Rng& rng,
           int64_t hierarchical_base = 8, int64_t plain_trunk = 32)
      : kind_(kind) {
    if (kind == BackboneKind::kHierarchical)
      hier_ = HierarchicalBackbone(name, in_channels, hierarchical_base, rng);
    else
      plain_ = PlainBackbone(name, in_channels, plain_trunk, rng);
  }

  PyramidMaps forward(const Tensor& video) const {
    return kind_ == BackboneKind::kHierarchical ? hier_.forward(video) : plain_.forward(video);
  }

  std::vector<int64_t> out_channels() const {
    return kind_ == BackboneKind::kHierarchical ? hier_.out_channels() : plain_.out_channels();
  }

  void visit(const ParamVisitor& v) {
    if (kind_ == BackboneKind::kHierarchical)
      hier_.visit(v);
    else
      plain_.visit(v);
  }

 private:
  BackboneKind kind_ = BackboneKind::kHierarchical;
  HierarchicalBackbone hier_;
  PlainBackbone plain_;
};

}  // namespace stmixer
