#pragma once

#include <vector>

#include "stmixer/backbone.hpp"
#include "stmixer/nn.hpp"

namespace stmixer {

/// Aligned multi-scale spatiotemporal volume: slab i of the scale axis
/// holds level z = i + 2, rescaled to the stride-4 common grid (H2 x W2).
struct FeatureSpace4D {
  Tensor volume;  // [D, T, Z=4, H2, W2]
  static constexpr int kZMin = 2;
  static constexpr int kZMax = 5;
  static constexpr int kGridStride = 4;  // input pixels per cell

  int64_t channels() const { return volume.dim(0); }
  int64_t frames() const { return volume.dim(1); }
  int64_t grid_h() const { return volume.dim(3); }
  int64_t grid_w() const { return volume.dim(4); }
};

/// Lateral 1x1x1 convolutions to a common channel count D, then
/// nearest-neighbor upsampling of every level to H2 x W2 (source index =
/// floor(target / 2^(z-2))), stacked along the scale axis.
class FeatureSpaceBuilder {
 public:
  FeatureSpaceBuilder() = default;
  FeatureSpaceBuilder(const std::string& name, const std::vector<int64_t>& in_channels, int64_t d,
                      Rng& rng) {
    if (in_channels.size() != 4)
      throw ConfigError("feature space: expected 4 pyramid levels, got " +
                        std::to_string(in_channels.size()));
    for (size_t i = 0; i < in_channels.size(); ++i)
      lateral_.emplace_back(name + ".lateral" + std::to_string(i + 2), in_channels[i], d, 1, 1, 1,
                            0, rng);
  }

  FeatureSpace4D build(const PyramidMaps& maps) const {
    if (maps.maps.size() != lateral_.size())
      throw ConfigError("feature space: got " + std::to_string(maps.maps.size()) +
                        " maps for " + std::to_string(lateral_.size()) + " lateral convs");
    std::vector<Tensor> slabs;
    for (size_t i = 0; i < maps.maps.size(); ++i) {
      const Tensor& m = maps.maps[i];
      if (m.dim(0) != lateral_[i].w.value.dim(1))
        throw ConfigError("feature space: level " + std::to_string(i + 2) + " has " +
                          std::to_string(m.dim(0)) + " channels, lateral conv expects " +
                          std::to_string(lateral_[i].w.value.dim(1)));
      Tensor lat = lateral_[i].forward(m);
      Tensor up = nearest_upsample2d(lat, 1 << i);
      Shape s = up.shape();  // [D, T, H2, W2]
      slabs.push_back(reshape(up, {s[0], s[1], 1, s[2], s[3]}));
    }
    FeatureSpace4D space;
    space.volume = concat(slabs, 2);
    return space;
  }

  void visit(const ParamVisitor& v) {
    for (auto& l : lateral_) l.visit(v);
  }

 private:
  std::vector<Conv3dLayer> lateral_;
};

}  // namespace stmixer
