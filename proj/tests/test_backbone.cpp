#include "stmixer/backbone.hpp"

#include <gtest/gtest.h>

#include "stmixer/gradcheck.hpp"

using namespace stmixer;

TEST(Hierarchical, StrideArithmetic64) {
  Rng rng(41);
  HierarchicalBackbone bb("bb", 1, 8, rng);
  Tensor video = Tensor::uniform({1, 8, 64, 64}, rng);
  PyramidMaps maps = bb.forward(video);
  ASSERT_EQ(maps.maps.size(), 4u);
  int64_t expect_hw[4] = {16, 8, 4, 2};
  int64_t expect_c[4] = {8, 16, 32, 64};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(maps.maps[size_t(i)].dim(0), expect_c[i]) << "level " << i;
    EXPECT_EQ(maps.maps[size_t(i)].dim(1), 8) << "T preserved at level " << i;
    EXPECT_EQ(maps.maps[size_t(i)].dim(2), expect_hw[i]);
    EXPECT_EQ(maps.maps[size_t(i)].dim(3), expect_hw[i]);
  }
}

TEST(Hierarchical, IndivisibleInputRejected) {
  Rng rng(42);
  HierarchicalBackbone bb("bb", 1, 4, rng);
  EXPECT_THROW(bb.forward(Tensor::zeros({1, 2, 48, 64})), GeometryError);
}

TEST(Hierarchical, GradientThroughTwoStages) {
  Rng rng(43);
  Conv3dLayer stem("stem", 1, 3, 1, 5, 4, 2, rng);
  Conv3dLayer stage("stage", 3, 6, 1, 3, 2, 1, rng);
  Tensor video = Tensor::uniform({1, 4, 16, 16}, rng);
  Tensor proj = Tensor::randn({6, 4, 2, 2}, rng);
  double err = grad_check_sampled(
      [&](std::vector<Tensor>& in) {
        Tensor x2 = relu(conv3d(in[0], in[1], in[2], 4, 2));
        Tensor x3 = relu(conv3d(x2, in[3], in[4], 2, 1));
        return sum_all(mul(x3, proj));
      },
      {video, stem.w.value.detach(), stem.b.value.detach(), stage.w.value.detach(),
       stage.b.value.detach()},
      24, 4301);
  EXPECT_LT(err, 1e-4);
}

TEST(Plain, TrunkAndHeadStrides) {
  Rng rng(44);
  PlainBackbone bb("plain", 1, 32, rng);
  Tensor video = Tensor::uniform({1, 8, 64, 64}, rng);
  PyramidMaps maps = bb.forward(video);
  ASSERT_EQ(maps.maps.size(), 4u);
  int64_t expect_hw[4] = {16, 8, 4, 2};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(maps.maps[size_t(i)].dim(0), 32) << "all plain maps share channel count";
    EXPECT_EQ(maps.maps[size_t(i)].dim(1), 8);
    EXPECT_EQ(maps.maps[size_t(i)].dim(2), expect_hw[i]);
  }
}

TEST(Plain, TransposedConvHeadGradient) {
  Rng rng(45);
  ConvTranspose3dLayer up("up", 3, 4, 2, 2, rng);
  Tensor x = Tensor::uniform({3, 2, 3, 3}, rng);
  Tensor proj = Tensor::randn({4, 2, 6, 6}, rng);
  double err = grad_check(
      [&](std::vector<Tensor>& in) {
        return sum_all(mul(conv_transpose3d(in[0], in[1], in[2], 2), proj));
      },
      {x, up.w.value.detach(), up.b.value.detach()});
  EXPECT_LT(err, 1e-4);
}

TEST(Backbone, ShapesArePureFunctionOfInputShape) {
  Rng rng(46);
  Backbone hier(BackboneKind::kHierarchical, "h", 1, rng);
  Backbone plain(BackboneKind::kPlain, "p", 1, rng);
  for (int64_t hw : {32, 64, 96}) {
    for (int64_t t : {2, 4}) {
      for (Backbone* bb : {&hier, &plain}) {
        Tensor video = Tensor::uniform({1, t, hw, hw}, rng);
        PyramidMaps maps = bb->forward(video);
        for (int i = 0; i < 4; ++i) {
          EXPECT_EQ(maps.maps[size_t(i)].dim(1), t);
          EXPECT_EQ(maps.maps[size_t(i)].dim(2), hw >> (i + 2));
          EXPECT_EQ(maps.maps[size_t(i)].dim(3), hw >> (i + 2));
        }
      }
    }
  }
}

TEST(Backbone, BothPathsInterchangeableDownstream) {
  // both kinds report out_channels consistent with their produced maps, so
  // the feature-space builder can consume either
  Rng rng(47);
  for (BackboneKind kind : {BackboneKind::kHierarchical, BackboneKind::kPlain}) {
    Backbone bb(kind, "bb", 1, rng);
    PyramidMaps maps = bb.forward(Tensor::uniform({1, 2, 32, 32}, rng));
    std::vector<int64_t> expected = bb.out_channels();
    for (int i = 0; i < 4; ++i) EXPECT_EQ(maps.maps[size_t(i)].dim(0), expected[size_t(i)]);
  }
}
