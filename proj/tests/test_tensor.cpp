#include "stmixer/tensor.hpp"

#include <gtest/gtest.h>

#include "stmixer/conv.hpp"
#include "stmixer/gradcheck.hpp"
#include "stmixer/optim.hpp"

using namespace stmixer;

TEST(Matmul, IdentityCase) {
  Tensor eye = Tensor::of({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::of({2, 2}, {3, 4, 5, 6});
  Tensor out = matmul(eye, b);
  EXPECT_EQ(out.values(), b.values());
}

TEST(Matmul, HandArithmetic) {
  Tensor a = Tensor::of({1, 2}, {1, 2});
  Tensor b = Tensor::of({2, 1}, {3, 4});
  EXPECT_DOUBLE_EQ(matmul(a, b).value(), 11.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientVsFiniteDifferences) {
  Rng rng(101);
  Tensor a = Tensor::randn({5, 4}, rng);
  Tensor b = Tensor::randn({4, 3}, rng);
  double err = grad_check(
      [](std::vector<Tensor>& in) { return sum_all(matmul(in[0], in[1])); }, {a, b});
  EXPECT_LT(err, 1e-6);
}

TEST(LayerNorm, ConstantVectorIsZero) {
  Tensor x = Tensor::of({3}, {5, 5, 5});
  Tensor gain = Tensor::filled({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor y = layernorm(x, gain, bias);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, SymmetricPair) {
  Tensor x = Tensor::of({2}, {1, 3});
  Tensor y = layernorm(x, Tensor::filled({2}, 1.0), Tensor::zeros({2}), 1e-12);
  EXPECT_NEAR(y.values()[0], -1.0, 1e-6);
  EXPECT_NEAR(y.values()[1], 1.0, 1e-6);
}

TEST(LayerNorm, EmptyAxisRejected) {
  EXPECT_THROW(layernorm(Tensor::zeros({2, 0}), Tensor::zeros({0}), Tensor::zeros({0})),
               DimensionError);
}

TEST(LayerNorm, GradientVsFiniteDifferences) {
  Rng rng(102);
  Tensor x = Tensor::randn({4, 8}, rng);
  Tensor gain = Tensor::randn({8}, rng, 0.3, 1.0);
  Tensor bias = Tensor::randn({8}, rng, 0.3);
  Tensor w = Tensor::randn({4, 8}, rng);
  double err = grad_check(
      [&w](std::vector<Tensor>& in) {
        return sum_all(mul(layernorm(in[0], in[1], in[2]), w));
      },
      {x, gain, bias});
  EXPECT_LT(err, 1e-5);
}

TEST(Conv3d, PointwiseKernelDoubles) {
  Rng rng(103);
  Tensor x = Tensor::randn({1, 2, 3, 3}, rng);
  Tensor w = Tensor::of({1, 1, 1, 1, 1}, {2.0});
  Tensor y = conv3d(x, w, Tensor(), 1, 0);
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.values()[size_t(i)], 2.0 * x.values()[size_t(i)]);
}

TEST(Conv3d, SummingKernel) {
  Tensor x = Tensor::of({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::filled({1, 1, 1, 2, 2}, 1.0);
  Tensor y = conv3d(x, w, Tensor(), 2, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.value(), 10.0);
}

TEST(Conv3d, KernelLargerThanPaddedInputRejected) {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  Tensor w = Tensor::zeros({1, 1, 1, 5, 5});
  EXPECT_THROW(conv3d(x, w, Tensor(), 1, 1), GeometryError);
}

TEST(Conv3d, GradientVsFiniteDifferences) {
  Rng rng(104);
  Tensor x = Tensor::randn({2, 2, 5, 5}, rng);
  Tensor w = Tensor::randn({3, 2, 1, 3, 3}, rng, 0.4);
  Tensor b = Tensor::randn({3}, rng, 0.2);
  Tensor proj = Tensor::randn({3, 2, 3, 3}, rng);
  double err = grad_check(
      [&proj](std::vector<Tensor>& in) {
        return sum_all(mul(conv3d(in[0], in[1], in[2], 2, 1), proj));
      },
      {x, w, b});
  EXPECT_LT(err, 1e-5);
}

TEST(ConvTranspose3d, UpsamplesByStride) {
  Rng rng(105);
  Tensor x = Tensor::randn({2, 2, 3, 3}, rng);
  Tensor w = Tensor::randn({4, 2, 1, 2, 2}, rng);
  Tensor y = conv_transpose3d(x, w, Tensor(), 2);
  EXPECT_EQ(y.shape(), (Shape{4, 2, 6, 6}));
  Tensor proj = Tensor::randn({4, 2, 6, 6}, rng);
  double err = grad_check(
      [&proj, &w](std::vector<Tensor>& in) {
        return sum_all(mul(conv_transpose3d(in[0], w, in[1], 2), proj));
      },
      {x, Tensor::zeros({4})});
  EXPECT_LT(err, 1e-5);
}

TEST(AdamW, ZeroGradZeroDecayLeavesValue) {
  Parameter p("p", Tensor::of({3}, {1, -2, 3}));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(p, Tensor::zeros({3}), cfg);
  EXPECT_EQ(p.value.values(), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(p.step_count, 1);
}

// Independently coded scalar reference for one update.
static double adamw_reference_one_step(double v, double g, double lr, double b1, double b2,
                                       double eps, double wd) {
  v -= lr * wd * v;
  double m = (1 - b1) * g;
  double s = (1 - b2) * g * g;
  double mhat = m / (1 - b1);
  double shat = s / (1 - b2);
  return v - lr * mhat / (std::sqrt(shat) + eps);
}

TEST(AdamW, OneStepMatchesScalarReference) {
  Parameter p("p", Tensor::of({1}, {0.5}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  adamw_step(p, Tensor::of({1}, {1.0}), cfg);
  double expected = adamw_reference_one_step(0.5, 1.0, 0.1, 0.9, 0.999, 1e-8, 0.0);
  EXPECT_DOUBLE_EQ(p.value.value(), expected);
  EXPECT_NEAR(p.value.value(), 0.5 - 0.1, 1e-6);  // ~ lr * 1/(1+eps-ish)
}

TEST(AdamW, PaperDefaultWeightDecay) {
  AdamWConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.weight_decay, 1e-4);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  Parameter p("decoder.weird", Tensor::zeros({2}));
  Tensor g = Tensor::of({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  try {
    adamw_step(p, g, AdamWConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.weird"), std::string::npos);
  }
}

TEST(GradCheck, SumHasExactGradient) {
  Rng rng(106);
  Tensor x = Tensor::randn({4, 3}, rng);
  double err = grad_check([](std::vector<Tensor>& in) { return sum_all(in[0]); }, {x});
  EXPECT_LT(err, 1e-9);
}

TEST(GradCheck, ReluLocallyLinearRegion) {
  Rng rng(107);
  Tensor x = Tensor::uniform({5}, rng, 1.5, 3.0);  // all > 1, away from the kink
  double err = grad_check([](std::vector<Tensor>& in) { return sum_all(relu(in[0])); }, {x});
  EXPECT_LT(err, 1e-9);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(108);
  Tensor x = Tensor::randn({6, 9}, rng, 3.0);
  Tensor y = softmax_lastaxis(x);
  for (int64_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 9; ++j) s += y.values()[size_t(r * 9 + j)];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Sigmoid, OpenUnitInterval) {
  Rng rng(109);
  Tensor x = Tensor::randn({100}, rng, 5.0);
  Tensor y = sigmoid(x);
  for (double v : y.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Backward, BitwiseDeterministic) {
  auto run = [](std::vector<double>* grads) {
    Rng rng(110);
    Tensor a = Tensor::randn({6, 6}, rng);
    Tensor b = Tensor::randn({6, 6}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor y = sum_all(mul(softmax_lastaxis(matmul(a, b)), matmul(b, a)));
    y.backward();
    *grads = a.grad().values();
    std::vector<double> gb = b.grad().values();
    grads->insert(grads->end(), gb.begin(), gb.end());
  };
  std::vector<double> g1, g2;
  run(&g1);
  run(&g2);
  ASSERT_EQ(g1.size(), g2.size());
  for (size_t i = 0; i < g1.size(); ++i)
    EXPECT_EQ(g1[i], g2[i]) << "gradient entry " << i << " differs between identical runs";
}

// Every differentiable op gets a finite-difference check on random small
// inputs; linear ops must clear the tighter bound.
TEST(GradCheck, OpBattery) {
  Rng rng(111);
  auto linear_bound = 1e-6;
  auto nonlinear_bound = 1e-4;

  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({3, 4}, rng, 1.0, 3.0);  // offset keeps div/log/abs away from kinks
  Tensor w = Tensor::randn({3, 4}, rng);

  auto check = [&](const char* name, double bound, ScalarFn f, std::vector<Tensor> inputs) {
    double err = grad_check(f, std::move(inputs));
    EXPECT_LT(err, bound) << name;
  };

  check("add", linear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(add(in[0], in[1]), w)); }, {a, b});
  check("sub", linear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(sub(in[0], in[1]), w)); }, {a, b});
  check("mul", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(mul(in[0], in[1]), w)); }, {a, b});
  check("div", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(div(in[0], in[1]), w)); }, {a, b});
  check("min", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(min_ew(in[0], in[1]), w)); }, {a, b});
  check("max", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(max_ew(in[0], in[1]), w)); }, {a, b});
  check("relu", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(relu(in[0]), w)); }, {a});
  check("sigmoid", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(sigmoid(in[0]), w)); }, {a});
  check("exp", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(exp_(in[0]), w)); }, {a});
  check("exp2", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(exp2_(in[0]), w)); }, {a});
  check("log", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(log_(in[0]), w)); }, {b});
  check("abs", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(abs_(in[0]), w)); }, {a});
  check("softplus", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(softplus(in[0]), w)); }, {a});
  check("mean_axis", linear_bound,
        [](std::vector<Tensor>& in) { return sum_all(mean_axis(in[0], 1)); }, {a});
  check("reshape+permute", linear_bound,
        [&w](std::vector<Tensor>& in) {
          return sum_all(mul(reshape(permute(in[0], {1, 0}), {3, 4}), w));
        },
        {a});
  check("concat+slice", linear_bound,
        [](std::vector<Tensor>& in) {
          return sum_all(slice(concat({in[0], in[0], in[1]}, 0), 0, 2, 5));
        },
        {a, b});
  check("gather_rows", linear_bound,
        [](std::vector<Tensor>& in) { return sum_all(gather_rows(in[0], {2, 0, 2})); }, {a});
  check("add_lastaxis", linear_bound,
        [&w](std::vector<Tensor>& in) {
          return sum_all(mul(add_lastaxis(in[0], in[1]), w));
        },
        {a, Tensor::randn({4}, rng)});
  check("mul_lastaxis", nonlinear_bound,
        [&w](std::vector<Tensor>& in) {
          return sum_all(mul(mul_lastaxis(in[0], in[1]), w));
        },
        {a, Tensor::randn({4}, rng)});
  check("sub_rowscalar", linear_bound,
        [&w](std::vector<Tensor>& in) {
          return sum_all(mul(sub_rowscalar(in[0], in[1]), w));
        },
        {a, Tensor::randn({3}, rng)});
  check("softmax", nonlinear_bound,
        [&w](std::vector<Tensor>& in) { return sum_all(mul(softmax_lastaxis(in[0]), w)); }, {a});
  check("logsumexp", nonlinear_bound,
        [](std::vector<Tensor>& in) { return sum_all(logsumexp_lastaxis(in[0])); }, {a});
  check("bmm", nonlinear_bound,
        [](std::vector<Tensor>& in) {
          return sum_all(bmm(reshape(in[0], {2, 3, 2}), reshape(in[1], {2, 2, 3})));
        },
        {Tensor::randn({12}, rng), Tensor::randn({12}, rng)});
  check("nearest_upsample", linear_bound,
        [](std::vector<Tensor>& in) { return sum_all(nearest_upsample2d(in[0], 2)); }, {a});
}

TEST(Tensor, InvariantProductShapeEqualsLength) {
  EXPECT_THROW(Tensor::of({2, 3}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  EXPECT_EQ(int64_t(t.values().size()), shape_numel(t.shape()));
}

TEST(Tensor, GradShapeMatchesValueShape) {
  Rng rng(112);
  Tensor x = Tensor::randn({3, 5}, rng);
  x.set_requires_grad(true);
  sum_all(mul(x, x)).backward();
  EXPECT_EQ(x.grad().shape(), x.shape());
}
