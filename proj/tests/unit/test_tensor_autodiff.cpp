#include <gtest/gtest.h>

#include <cmath>

#include "cilf/adam.hpp"
#include "cilf/errors.hpp"
#include "cilf/tensor.hpp"
#include "test_support.hpp"

using namespace cilf;
using cilf::testing::check_gradients;
using cilf::testing::random_tensor;

namespace {

Tensor eval(const std::function<Var(Tape&)>& f) {
  Tape t;
  return f(t).value();
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  const Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(shape_size(t.shape()), t.size());
}

TEST(Tensor, GradPresentOnlyWhenRequested) {
  Tensor t({2, 2});
  EXPECT_THROW(t.grad(), PreconditionError);
  t.set_requires_grad(true);
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(Matmul, IdentityAndHandCase) {
  const Tensor i = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  EXPECT_EQ(eval([&](Tape& t) { return ops::matmul(t.constant(i), t.constant(b)); }), b);
  const Tensor r = eval([](Tape& t) {
    return ops::matmul(t.constant(Tensor::matrix({{1, 2}})), t.constant(Tensor::matrix({{3}, {4}})));
  });
  EXPECT_DOUBLE_EQ(r.item(), 11.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ops::matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), DimensionError);
}

TEST(Matmul, SumGradientIsRowSumsOfB) {
  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  a.set_requires_grad(true);
  Tape t;
  t.backward(ops::sum(ops::matmul(t.parameter(a), t.constant(b))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.grad()[i * 4 + k], b.at(k, 0) + b.at(k, 1), 1e-14);
  const auto fd = check_gradients({&a}, [&](Tape& tp) { return ops::sum(ops::matmul(tp.parameter(a), tp.constant(b))); });
  EXPECT_LT(fd.relative_error, 1e-8);
}

TEST(SoftmaxCrossEntropy, Examples) {
  const auto ce = [](Tensor logits, std::vector<std::size_t> labels) {
    Tape t;
    return ops::softmax_cross_entropy(t.constant(std::move(logits)), labels).value().item();
  };
  EXPECT_NEAR(ce(Tensor::matrix({{0, 0}}), {0}), std::log(2.0), 1e-15);
  // -log(e^10 / (e^10 + 1)) = log1p(e^-10)
  EXPECT_NEAR(ce(Tensor::matrix({{10, 0}}), {0}), std::log1p(std::exp(-10.0)), 1e-18);
  EXPECT_NEAR(ce(Tensor::matrix({{10, 0}}), {0}), 4.5398899216870535e-05, 1e-17);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  Tape t;
  const std::vector<std::size_t> labels = {2};
  EXPECT_THROW(ops::softmax_cross_entropy(t.constant(Tensor::matrix({{0, 0}})), labels), IndexError);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(2);
  Tensor z = random_tensor({3, 5}, rng, -3, 3);
  z.set_requires_grad(true);
  const std::vector<std::size_t> labels = {4, 0, 2};
  Tape t;
  t.backward(ops::softmax_cross_entropy(t.parameter(z), labels));
  const auto p = math::softmax_rows(z.data(), 3, 5);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      EXPECT_NEAR(z.grad()[r * 5 + c], (p[r * 5 + c] - (c == labels[r] ? 1.0 : 0.0)) / 3.0, 1e-15);
}

TEST(SoftmaxCrossEntropy, ShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = random_tensor({4, 6}, rng, -5, 5);
    Tensor shifted = z;
    for (std::size_t r = 0; r < 4; ++r) {
      const double c = 100.0 * rng.normal();
      for (auto& x : shifted.row(r)) x += c;
    }
    const std::vector<std::size_t> labels = {0, 5, 2, 3};
    Tape t;
    const double a = ops::softmax_cross_entropy(t.constant(z), labels).value().item();
    const double b = ops::softmax_cross_entropy(t.constant(shifted), labels).value().item();
    EXPECT_LT(std::abs(a - b), 1e-9);
  }
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::vector({3.0});
  x.set_requires_grad(true);
  Tape t;
  Var v = t.parameter(x);
  t.backward(ops::sum(ops::add(v, v)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Autodiff, BackwardVisitsEachNodeOnce) {
  Tensor x = Tensor::vector({1.0, 2.0});
  x.set_requires_grad(true);
  Tape t;
  Var v = t.parameter(x);
  Var y = ops::mul(v, v);
  Var z = ops::add(y, v);
  t.backward(ops::sum(z));
  EXPECT_EQ(t.visits(), t.size());
  EXPECT_THROW(t.backward(ops::sum(z)), PreconditionError);
}

TEST(Autodiff, RootMustBeScalar) {
  Tape t;
  Tensor x({2});
  x.set_requires_grad(true);
  EXPECT_THROW(t.backward(t.parameter(x)), DimensionError);
}

TEST(Autodiff, FiniteDifferencesPerOp) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
    Tensor kernel = random_tensor({2, 1, 3, 3}, rng), img = random_tensor({2, 1, 4, 4}, rng);
    const std::vector<std::pair<const char*, std::function<Var(Tape&)>>> cases = {
        {"transpose", [&](Tape& t) { return ops::transpose(t.parameter(a)); }},
        {"mul", [&](Tape& t) { return ops::mul(t.parameter(a), t.parameter(b)); }},
        {"add_bias", [&](Tape& t) { return ops::add_bias(t.parameter(a), t.parameter(bias)); }},
        {"mean", [&](Tape& t) { return ops::mean(t.parameter(a)); }},
        {"row_sq_norm", [&](Tape& t) { return ops::row_sq_norm(t.parameter(a)); }},
        {"row_l2_norm", [&](Tape& t) { return ops::row_l2_norm(t.parameter(a)); }},
        {"gather", [&](Tape& t) { return ops::gather_columns(t.parameter(a), {3, 0, 0}); }},
        {"conv2d", [&](Tape& t) { return ops::conv2d(t.parameter(img), t.parameter(kernel), 1, 1); }},
        {"avg_pool2d", [&](Tape& t) { return ops::avg_pool2d(t.parameter(img), 2); }},
    };
    for (const auto& [name, f] : cases) {
      const auto res = check_gradients({&a, &b, &bias, &kernel, &img}, f, trial);
      EXPECT_LT(res.relative_error, 1e-6) << name;
    }
  }
}

TEST(Autodiff, RowL2NormZeroRowHasZeroGradient) {
  Tensor a({2, 3}, std::vector<double>{0, 0, 0, 3, 4, 0});
  a.set_requires_grad(true);
  Tape t;
  t.backward(ops::sum(ops::row_l2_norm(t.parameter(a))));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a.grad()[j], 0.0);
  EXPECT_DOUBLE_EQ(a.grad()[3], 0.6);
  EXPECT_DOUBLE_EQ(a.grad()[4], 0.8);
}

TEST(Autodiff, GatherOutOfRange) {
  Tape t;
  EXPECT_THROW(ops::gather_columns(t.constant(Tensor({2, 3})), {3}), IndexError);
}

TEST(Conv2d, OnesAndDelta) {
  const Tensor out = eval([](Tape& t) {
    return ops::conv2d(t.constant(Tensor({1, 1, 3, 3}, 1.0)), t.constant(Tensor({1, 1, 1, 1}, 2.0)), 1, 0);
  });
  EXPECT_EQ(out, Tensor({1, 1, 3, 3}, 2.0));

  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 5, 5}, rng);
  Tensor delta({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) delta[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  EXPECT_EQ(eval([&](Tape& t) { return ops::conv2d(t.constant(x), t.constant(delta), 1, 1); }), x);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t B = 2, C = 2, H = 6, W = 6, F = 3, K = 3, stride = 1 + trial % 2, pad = trial % 2;
    const Tensor x = random_tensor({B, C, H, W}, rng);
    const Tensor k = random_tensor({F, C, K, K}, rng);
    const Tensor out = eval([&](Tape& t) { return ops::conv2d(t.constant(x), t.constant(k), stride, pad); });
    const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    ASSERT_EQ(out.shape(), (Shape{B, F, Ho, Wo}));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t i = 0; i < Ho; ++i)
          for (std::size_t j = 0; j < Wo; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t u = 0; u < K; ++u)
                for (std::size_t v = 0; v < K; ++v) {
                  const long y = long(i * stride + u) - long(pad), xx = long(j * stride + v) - long(pad);
                  if (y < 0 || xx < 0 || y >= long(H) || xx >= long(W)) continue;
                  acc += x[((b * C + c) * H + y) * W + xx] * k[((f * C + c) * K + u) * K + v];
                }
            EXPECT_NEAR(out[((b * F + f) * Ho + i) * Wo + j], acc, 1e-12);
          }
  }
}

TEST(Conv2d, IncompatibleDims) {
  Tape t;
  EXPECT_THROW(ops::conv2d(t.constant(Tensor({1, 2, 4, 4})), t.constant(Tensor({1, 3, 3, 3})), 1, 0), DimensionError);
  EXPECT_THROW(ops::conv2d(t.constant(Tensor({1, 1, 2, 2})), t.constant(Tensor({1, 1, 3, 3})), 1, 0), DimensionError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor w = Tensor::vector({1.0, -2.0});
  w.set_requires_grad(true);
  std::vector<Tensor*> params = {&w};
  AdamState s(params, {});
  adam_step(params, s);
  EXPECT_EQ(w.values(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w = Tensor::vector({0.5});
  w.set_requires_grad(true);
  w.grad()[0] = 1.0;
  std::vector<Tensor*> params = {&w};
  AdamState s(params, {});
  adam_step(params, s);
  EXPECT_NEAR(w[0], 0.5 - 0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, QuadraticTrajectoryMatchesScalarOracle) {
  Tensor w = Tensor::vector({1.0});
  w.set_requires_grad(true);
  std::vector<Tensor*> params = {&w};
  AdamOptions opts;
  opts.learning_rate = 0.1;
  AdamState s(params, opts);

  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    w.zero_grad();
    Tape tape;
    Var p = tape.parameter(w);
    tape.backward(ops::sum(ops::mul(p, p)));
    adam_step(params, s);

    const double g = 2.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(w[0], x, 1e-14) << "step " << t;
  }
}

TEST(Adam, ShapeChangeRejected) {
  Tensor w({2});
  w.set_requires_grad(true);
  std::vector<Tensor*> params = {&w};
  AdamState s(params, {});
  Tensor other({3});
  other.set_requires_grad(true);
  std::vector<Tensor*> swapped = {&other};
  EXPECT_THROW(adam_step(swapped, s), DimensionError);
}
