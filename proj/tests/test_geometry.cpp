#include "stmixer/geometry.hpp"

#include <gtest/gtest.h>

#include "stmixer/gradcheck.hpp"

using namespace stmixer;

TEST(BoxCodec, DecodeFormulaArithmetic) {
  Box b = pquery_to_box(PositionalQuery{8, 8, 2, 0});
  EXPECT_DOUBLE_EQ(b.x1, 6.0);
  EXPECT_DOUBLE_EQ(b.y1, 6.0);
  EXPECT_DOUBLE_EQ(b.x2, 10.0);
  EXPECT_DOUBLE_EQ(b.y2, 10.0);
}

TEST(BoxCodec, AspectRatioSplitsScale) {
  Box b = pquery_to_box(PositionalQuery{0, 0, 2, 1});
  EXPECT_DOUBLE_EQ(b.width(), 2.0);
  EXPECT_DOUBLE_EQ(b.height(), 8.0);
}

TEST(BoxCodec, SquareSideFour) {
  PositionalQuery q = box_to_pquery(Box{-2, -2, 2, 2});
  EXPECT_DOUBLE_EQ(q.z, 2.0);
  EXPECT_DOUBLE_EQ(q.r, 0.0);
  EXPECT_DOUBLE_EQ(q.x, 0.0);
}

TEST(BoxCodec, WholeKeyframe) {
  PositionalQuery q = box_to_pquery(Box{0, 0, 64, 64});
  EXPECT_DOUBLE_EQ(q.x, 32.0);
  EXPECT_DOUBLE_EQ(q.y, 32.0);
  EXPECT_DOUBLE_EQ(q.z, 6.0);
  EXPECT_DOUBLE_EQ(q.r, 0.0);
}

TEST(BoxCodec, DegenerateBoxRejected) {
  EXPECT_THROW(box_to_pquery(Box{3, 1, 3, 5}), GeometryError);
  EXPECT_THROW(box_to_pquery(Box{1, 5, 3, 5}), GeometryError);
}

TEST(BoxCodec, RoundtripWithinTolerance) {
  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    Box b;
    b.x1 = rng.uniform(-50, 50);
    b.y1 = rng.uniform(-50, 50);
    b.x2 = b.x1 + rng.uniform(0.1, 80);
    b.y2 = b.y1 + rng.uniform(0.1, 80);
    Box rt = pquery_to_box(box_to_pquery(b));
    EXPECT_NEAR(rt.x1, b.x1, 1e-9);
    EXPECT_NEAR(rt.y1, b.y1, 1e-9);
    EXPECT_NEAR(rt.x2, b.x2, 1e-9);
    EXPECT_NEAR(rt.y2, b.y2, 1e-9);
  }
}

TEST(InitQueries, AllDecodeToWholeKeyframe) {
  Rng rng(22);
  QuerySet qs = init_queries(8, 16, 64, 64, rng);
  for (int64_t n = 0; n < 8; ++n) {
    Box b = pquery_to_box(qs.pquery(n));
    EXPECT_DOUBLE_EQ(b.x1, 0.0);
    EXPECT_DOUBLE_EQ(b.y1, 0.0);
    EXPECT_DOUBLE_EQ(b.x2, 64.0);
    EXPECT_DOUBLE_EQ(b.y2, 64.0);
  }
}

TEST(InitQueries, PaperScaleQueryCount) {
  TrainConfig paper = TrainConfig::paper_scale();
  EXPECT_EQ(paper.queries, 100);
  EXPECT_EQ(paper.d, 256);
}

TEST(InitQueries, DeterministicContent) {
  Rng a(33), b(33);
  QuerySet qa = init_queries(5, 8, 64, 64, a);
  QuerySet qb = init_queries(5, 8, 64, 64, b);
  EXPECT_EQ(qa.spatial.values(), qb.spatial.values());
  EXPECT_EQ(qa.temporal.values(), qb.temporal.values());
}

TEST(InitQueries, RejectsNonPositiveDims) {
  Rng rng(1);
  EXPECT_THROW(init_queries(0, 8, 64, 64, rng), ConfigError);
  EXPECT_THROW(init_queries(8, 0, 64, 64, rng), ConfigError);
}

TEST(Giou, IdentityIsOne) {
  Box b{3, 4, 9, 11};
  EXPECT_DOUBLE_EQ(giou(b, b), 1.0);
}

TEST(Giou, TouchingUnitSquaresIsZero) {
  EXPECT_DOUBLE_EQ(giou(Box{0, 0, 1, 1}, Box{1, 0, 2, 1}), 0.0);
}

// Brute-force rasterization on a fine subpixel grid.
static double giou_rasterized(const Box& a, const Box& b) {
  double x_lo = std::min(a.x1, b.x1), x_hi = std::max(a.x2, b.x2);
  double y_lo = std::min(a.y1, b.y1), y_hi = std::max(a.y2, b.y2);
  int n = 400;
  double dx = (x_hi - x_lo) / n, dy = (y_hi - y_lo) / n;
  double cell = dx * dy;
  double inter = 0, area_a = 0, area_b = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double x = x_lo + (i + 0.5) * dx, y = y_lo + (j + 0.5) * dy;
      bool in_a = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
      bool in_b = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
      inter += (in_a && in_b) * cell;
      area_a += in_a * cell;
      area_b += in_b * cell;
    }
  double uni = area_a + area_b - inter;
  double hull = (x_hi - x_lo) * (y_hi - y_lo);
  return inter / uni - (hull - uni) / hull;
}

TEST(Giou, AgreesWithRasterizationOracle) {
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    Box a, b;
    a.x1 = rng.uniform(0, 40);
    a.y1 = rng.uniform(0, 40);
    a.x2 = a.x1 + rng.uniform(2, 25);
    a.y2 = a.y1 + rng.uniform(2, 25);
    b.x1 = rng.uniform(0, 40);
    b.y1 = rng.uniform(0, 40);
    b.x2 = b.x1 + rng.uniform(2, 25);
    b.y2 = b.y1 + rng.uniform(2, 25);
    EXPECT_NEAR(giou(a, b), giou_rasterized(a, b), 1e-2);
    EXPECT_LE(giou(a, b), iou(a, b) + 1e-12);
  }
}

TEST(Giou, SymmetricAndTranslationInvariant) {
  Rng rng(24);
  for (int i = 0; i < 200; ++i) {
    Box a{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(11, 25), rng.uniform(11, 25)};
    Box b{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(11, 25), rng.uniform(11, 25)};
    EXPECT_DOUBLE_EQ(giou(a, b), giou(b, a));
    double tx = rng.uniform(-5, 5), ty = rng.uniform(-5, 5);
    Box a2{a.x1 + tx, a.y1 + ty, a.x2 + tx, a.y2 + ty};
    Box b2{b.x1 + tx, b.y1 + ty, b.x2 + tx, b.y2 + ty};
    EXPECT_NEAR(giou(a, b), giou(a2, b2), 1e-12);
  }
}

TEST(Giou, ApproachesMinusOneForDistantBoxes) {
  Box a{0, 0, 1, 1};
  Box b{1e7, 0, 1e7 + 1, 1};
  EXPECT_LT(giou(a, b), -0.999);
  EXPECT_GT(giou(a, b), -1.0);
}

TEST(GiouTensor, MatchesValueRoute) {
  Rng rng(25);
  for (int i = 0; i < 100; ++i) {
    Box a{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(12, 30), rng.uniform(12, 30)};
    Box b{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(12, 30), rng.uniform(12, 30)};
    Tensor ta = Tensor::of({1, 4}, {a.x1, a.y1, a.x2, a.y2});
    Tensor tb = Tensor::of({1, 4}, {b.x1, b.y1, b.x2, b.y2});
    EXPECT_NEAR(giou_pairs(ta, tb).value(), giou(a, b), 1e-12);
  }
}

TEST(PqueryToCorners, MatchesValueRouteExactly) {
  Rng rng(26);
  for (int i = 0; i < 200; ++i) {
    PositionalQuery q{rng.uniform(-10, 70), rng.uniform(-10, 70), rng.uniform(0, 6),
                      rng.uniform(-1, 1)};
    Tensor t = Tensor::of({1, 4}, {q.x, q.y, q.z, q.r});
    Tensor corners = pquery_to_corners(t);
    Box b = pquery_to_box(q);
    EXPECT_DOUBLE_EQ(corners.at({0, 0}), b.x1);
    EXPECT_DOUBLE_EQ(corners.at({0, 1}), b.y1);
    EXPECT_DOUBLE_EQ(corners.at({0, 2}), b.x2);
    EXPECT_DOUBLE_EQ(corners.at({0, 3}), b.y2);
  }
}

TEST(ApplyBoxDeltas, ZeroDeltaIsIdentity) {
  Tensor q = Tensor::of({2, 4}, {8, 8, 2, 0, 30, 20, 4, 0.5});
  Tensor out = apply_box_deltas(q, Tensor::zeros({2, 4}));
  EXPECT_EQ(out.values(), q.values());
}

TEST(ApplyBoxDeltas, ScalesWithBoxSize) {
  // width 4, height 4: dx=0.5 moves the center by 2 pixels
  Tensor q = Tensor::of({1, 4}, {8, 8, 2, 0});
  Tensor d = Tensor::of({1, 4}, {0.5, -0.25, 0.1, 0.2});
  Tensor out = apply_box_deltas(q, d);
  EXPECT_DOUBLE_EQ(out.at({0, 0}), 10.0);
  EXPECT_DOUBLE_EQ(out.at({0, 1}), 7.0);
  EXPECT_DOUBLE_EQ(out.at({0, 2}), 2.1);
  EXPECT_DOUBLE_EQ(out.at({0, 3}), 0.2);
}

TEST(GeometryTensorOps, GradientsVsFiniteDifferences) {
  Rng rng(27);
  Tensor q = Tensor::of({3, 4}, {8.1, 7.7, 2.3, 0.12, 30.2, 21.9, 4.4, -0.31, 15.5, 40.1, 3.3, 0.4});
  Tensor d = Tensor::randn({3, 4}, rng, 0.2);
  Tensor w1 = Tensor::randn({3, 4}, rng);
  double e1 = grad_check(
      [&w1](std::vector<Tensor>& in) {
        return sum_all(mul(pquery_to_corners(apply_box_deltas(in[0], in[1])), w1));
      },
      {q, d});
  EXPECT_LT(e1, 1e-5);
}
