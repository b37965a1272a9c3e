#include <gtest/gtest.h>

#include <algorithm>

#include <array>
#include <cmath>
#include <vector>

#include "exposura/error.hpp"
#include "exposura/gradcheck.hpp"
#include "exposura/ops.hpp"
#include "exposura/tape.hpp"
#include "fixtures.hpp"

namespace exposura {
namespace {

using testing::random_tensor;
using T64 = Tensor<double>;

constexpr double kTol = 1e-4;

GradcheckOptions fd() { return GradcheckOptions{}; }

TEST(Tensor, ShapeAndStorage) {
  Tensor<float> t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.rank(), 2);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{0, 2}), ShapeError);
}

TEST(Tensor, CopyOnWrite) {
  Tensor<float> a(Shape{3}, 1.0f);
  Tensor<float> b = a;
  b.mutable_data()[0] = 7.0f;
  EXPECT_EQ(a.data()[0], 1.0f);
  EXPECT_EQ(b.data()[0], 7.0f);
}

TEST(Tensor, DetachDropsNode) {
  Tape<float> tape;
  Tensor<float> w = tape.watch(Tensor<float>(Shape{2}, 1.0f));
  EXPECT_TRUE(w.on_tape());
  Tensor<float> d = w.detach();
  EXPECT_FALSE(d.on_tape());
  EXPECT_EQ(d.node(), kNoNode);
}

TEST(Conv2d, ScalarKernel) {
  Tensor<float> x(Shape{1, 1, 3, 3}, 1.0f);
  Tensor<float> w(Shape{1, 1, 1, 1}, 2.0f);
  Tensor<float> y = conv2d(x, w, Tensor<float>(), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (float v : y.data()) EXPECT_EQ(v, 2.0f);
}

TEST(Conv2d, HandSum) {
  Tensor<float> x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<float> w(Shape{1, 1, 3, 3}, 1.0f);
  Tensor<float> y = conv2d(x, w, Tensor<float>(), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 45.0f);
}

TEST(Conv2d, OutputExtent) {
  Tensor<float> x(Shape{2, 3, 17, 12}, 0.5f);
  Tensor<float> w(Shape{4, 3, 4, 4}, 0.1f);
  Tensor<float> y = conv2d(x, w, Tensor<float>(Shape{4}, 0.0f), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 4, (17 + 2 - 4) / 2 + 1, (12 + 2 - 4) / 2 + 1}));
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  Tensor<float> x(Shape{1, 2, 5, 5}, 0.0f);
  Tensor<float> w(Shape{1, 3, 3, 3}, 0.0f);
  try {
    conv2d(x, w, Tensor<float>(), 1, 0);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[1x2x5x5]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1x3x3x3]"), std::string::npos) << msg;
  }
}

template <typename T>
void expect_paths_agree(double tol, bool relative) {
  auto close = [&](T a, T b) {
    const double bound = relative ? tol * std::max(1.0, std::abs(static_cast<double>(b))) : tol;
    EXPECT_LE(std::abs(static_cast<double>(a) - static_cast<double>(b)), bound) << a << " vs " << b;
  };
  for (auto [stride, pad, k] : std::vector<std::array<int, 3>>{{1, 0, 3}, {2, 1, 4}, {1, 1, 3}, {2, 0, 1}}) {
    auto x = random_tensor<T>(Shape{2, 3, 11, 9}, 1);
    auto w = random_tensor<T>(Shape{5, 3, k, k}, 2);
    auto b = random_tensor<T>(Shape{5}, 3);
    auto fast = conv2d(x, w, b, stride, pad, ConvPath::kIm2col);
    auto slow = conv2d(x, w, b, stride, pad, ConvPath::kDirect);
    ASSERT_EQ(fast.shape(), slow.shape());
    for (std::int64_t i = 0; i < fast.numel(); ++i) close(fast.data()[i], slow.data()[i]);

    auto xt = random_tensor<T>(Shape{2, 3, 5, 4}, 4);
    auto wt = random_tensor<T>(Shape{3, 2, k, k}, 5);
    auto tf = conv2d_transposed(xt, wt, Tensor<T>(), stride, pad, ConvPath::kIm2col);
    auto ts = conv2d_transposed(xt, wt, Tensor<T>(), stride, pad, ConvPath::kDirect);
    for (std::int64_t i = 0; i < tf.numel(); ++i) close(tf.data()[i], ts.data()[i]);
  }
}

TEST(Conv2d, Im2colMatchesDirect) { expect_paths_agree<double>(1e-6, false); }

// float: tolerance scaled by the output magnitude
TEST(Conv2d, Im2colMatchesDirectFloat) { expect_paths_agree<float>(1e-6, true); }

TEST(Conv2d, FiniteDifferences) {
  auto x = random_tensor<double>(Shape{2, 2, 6, 5}, 11);
  auto w = random_tensor<double>(Shape{3, 2, 3, 3}, 12);
  auto b = random_tensor<double>(Shape{3}, 13);
  for (ConvPath path : {ConvPath::kIm2col, ConvPath::kDirect}) {
    double err = gradcheck_error([path](const std::vector<T64>& in) { return conv2d(in[0], in[1], in[2], 2, 1, path); },
                                 {x, w, b}, fd());
    EXPECT_LT(err, kTol);
  }
}

TEST(Conv2dTransposed, KernelStamp) {
  Tensor<float> x(Shape{1, 1, 1, 1}, 1.0f);
  Tensor<float> w(Shape{1, 1, 2, 2}, 1.0f);
  Tensor<float> y = conv2d_transposed(x, w, Tensor<float>(), 2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (float v : y.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Conv2dTransposed, OutputExtent) {
  EXPECT_EQ(conv_transposed_output_extent(16, 4, 2, 1), 32);
  EXPECT_EQ(conv_transposed_output_extent(5, 3, 1, 1), 5);
}

// conv2d_transposed(c, w) must equal d/dx <conv2d(x, w), c>.
TEST(Conv2dTransposed, AdjointOfConv) {
  for (auto [stride, pad, k] : std::vector<std::array<int, 3>>{{2, 1, 4}, {1, 1, 3}, {2, 0, 2}}) {
    auto x = random_tensor<double>(Shape{2, 3, 8, 8}, 21);
    auto w = random_tensor<double>(Shape{4, 3, k, k}, 22);
    Tape<double> tape;
    T64 xw = tape.watch(x);
    T64 y = conv2d(xw, w, T64(), stride, pad);
    auto cot = random_tensor<double>(y.shape(), 23);
    auto grads = tape.backward(sum(mul(y, cot)));
    T64 adj = conv2d_transposed(cot, w, T64(), stride, pad);
    const T64& gx = grads.at(xw);
    ASSERT_EQ(adj.shape(), gx.shape());
    for (std::int64_t i = 0; i < adj.numel(); ++i) EXPECT_NEAR(adj.data()[i], gx.data()[i], 1e-10);
  }
}

TEST(Conv2dTransposed, FiniteDifferences) {
  auto x = random_tensor<double>(Shape{1, 3, 4, 4}, 31);
  auto w = random_tensor<double>(Shape{3, 2, 4, 4}, 32);
  auto b = random_tensor<double>(Shape{2}, 33);
  double err = gradcheck_error(
      [](const std::vector<T64>& in) { return conv2d_transposed(in[0], in[1], in[2], 2, 1); }, {x, w, b}, fd());
  EXPECT_LT(err, kTol);
}

TEST(Elementwise, Definitions) {
  Tensor<float> x(Shape{3}, {-1, 0, 2});
  Tensor<float> r = relu(x);
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), (std::vector<float>{0, 0, 2}));
  EXPECT_FLOAT_EQ(leaky_relu(Tensor<float>(Shape{1}, -10.0f), 0.2f).item(), -2.0f);
  EXPECT_FLOAT_EQ(leaky_relu(Tensor<float>(Shape{1}, 3.0f), 0.2f).item(), 3.0f);
}

TEST(Elementwise, MulProductRule) {
  Tape<double> tape;
  T64 a = tape.watch(T64(Shape{1}, 2.0));
  T64 b = tape.watch(T64(Shape{1}, 3.0));
  auto g = tape.backward(mul(a, b));
  EXPECT_DOUBLE_EQ(g.at(a).item(), 3.0);
  EXPECT_DOUBLE_EQ(g.at(b).item(), 2.0);
}

TEST(Elementwise, IncompatibleShapesRejected) {
  EXPECT_THROW(add(Tensor<float>(Shape{2, 3}), Tensor<float>(Shape{2, 4})), ShapeError);
  EXPECT_NO_THROW(add(Tensor<float>(Shape{2, 3, 4, 4}), Tensor<float>(Shape{1, 3, 1, 1})));
}

TEST(Elementwise, FiniteDifferences) {
  // Entries stay away from 0 so the kinks are out of reach of the step.
  auto x = random_tensor<double>(Shape{2, 3, 4, 4}, 41, 0.05, 1.0);
  auto sign = random_tensor<double>(Shape{2, 3, 4, 4}, 42);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (sign.data()[i] < 0) x.mutable_data()[i] = -x.data()[i];
  auto y = random_tensor<double>(Shape{1, 3, 1, 1}, 43);
  auto check = [&](const GradcheckFn& f, std::vector<T64> in) { EXPECT_LT(gradcheck_error(f, in, fd()), kTol); };
  check([](const std::vector<T64>& in) { return relu(in[0]); }, {x});
  check([](const std::vector<T64>& in) { return leaky_relu(in[0], 0.2); }, {x});
  check([](const std::vector<T64>& in) { return exposura::tanh(in[0]); }, {x});
  check([](const std::vector<T64>& in) { return add(in[0], in[1]); }, {x, y});
  check([](const std::vector<T64>& in) { return sub(in[0], in[1]); }, {x, y});
  check([](const std::vector<T64>& in) { return mul(in[0], in[1]); }, {x, y});
  check([](const std::vector<T64>& in) { return scale(in[0], -1.7); }, {x});
}

TEST(Reduce, Values) {
  EXPECT_NEAR(abs_mean(Tensor<double>(Shape{3}, {1, -1, 2})).item(), 4.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(sq_mean(Tensor<double>(Shape{2}, {3, 4})).item(), 12.5);
  EXPECT_DOUBLE_EQ(sum(Tensor<double>(Shape{3}, {1, 2, 3})).item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(Tensor<double>(Shape{4}, {1, 2, 3, 6})).item(), 3.0);
}

TEST(Reduce, SqMeanGradient) {
  Tape<double> tape;
  T64 x = tape.watch(T64(Shape{2}, {3, 4}));
  auto g = tape.backward(sq_mean(x));
  EXPECT_DOUBLE_EQ(g.at(x).data()[0], 3.0);
  EXPECT_DOUBLE_EQ(g.at(x).data()[1], 4.0);
}

TEST(Reduce, FiniteDifferences) {
  auto x = random_tensor<double>(Shape{2, 2, 3, 3}, 51, 0.05, 1.0);
  for (std::int64_t i = 0; i < x.numel(); i += 2) x.mutable_data()[i] *= -1;
  for (auto f : std::vector<GradcheckFn>{
           [](const std::vector<T64>& in) { return sum(in[0]); },
           [](const std::vector<T64>& in) { return mean(in[0]); },
           [](const std::vector<T64>& in) { return abs_mean(in[0]); },
           [](const std::vector<T64>& in) { return sq_mean(in[0]); },
       })
    EXPECT_LT(gradcheck_error(f, {x}, fd()), kTol);
}

TEST(DownsampleAvg, Values) {
  Tensor<float> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_FLOAT_EQ(downsample_avg(x, 2).item(), 2.5f);
  Tensor<float> c(Shape{1, 2, 8, 4}, 0.3f);
  Tensor<float> d = downsample_avg(c, 4);
  EXPECT_EQ(d.shape(), (Shape{1, 2, 2, 1}));
  for (float v : d.data()) EXPECT_FLOAT_EQ(v, 0.3f);
  EXPECT_THROW(downsample_avg(Tensor<float>(Shape{1, 1, 3, 4}), 2), ShapeError);
}

TEST(DownsampleAvg, GradientSpreadsUniformly) {
  Tape<double> tape;
  T64 x = tape.watch(random_tensor<double>(Shape{1, 1, 4, 4}, 61));
  auto g = tape.backward(sum(downsample_avg(x, 2)));
  for (double v : g.at(x).data()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_LT(gradcheck_error([](const std::vector<T64>& in) { return downsample_avg(in[0], 2); },
                            {random_tensor<double>(Shape{2, 3, 8, 4}, 62)}, fd()),
            kTol);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  T64 w = tape.watch(T64(Shape{3}, {0.1, -2, 5}));
  auto g = tape.backward(sum(w));
  for (double v : g.at(w).data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, ConvSqMeanFiniteDifferences) {
  auto x = random_tensor<double>(Shape{1, 2, 5, 5}, 71);
  auto w = random_tensor<double>(Shape{2, 2, 3, 3}, 72);
  EXPECT_LT(gradcheck_error(
                [](const std::vector<T64>& in) { return sq_mean(conv2d(in[0], in[1], T64(), 1, 1)); }, {x, w}, fd()),
            kTol);
}

TEST(Backward, DisjointSubgraphGetsNoGradient) {
  Tape<double> tape;
  T64 a = tape.watch(T64(Shape{2}, 1.0));
  T64 b = tape.watch(T64(Shape{2}, 2.0));
  T64 la = sum(a);
  T64 lb = sum(b);
  (void)lb;
  auto g = tape.backward(la);
  EXPECT_TRUE(g.contains(a));
  EXPECT_FALSE(g.contains(b));
}

TEST(Backward, NonScalarLossRejected) {
  Tape<double> tape;
  T64 a = tape.watch(T64(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(scale(a, 2.0)), ShapeError);
}

TEST(Backward, ReplayIsBitwiseDeterministic) {
  Tape<float> tape;
  auto x = tape.watch(random_tensor<float>(Shape{2, 3, 8, 8}, 81));
  auto w = tape.watch(random_tensor<float>(Shape{4, 3, 4, 4}, 82));
  auto loss = sq_mean(relu(conv2d(x, w, Tensor<float>(), 2, 1)));
  auto g1 = tape.backward(loss);
  auto g2 = tape.backward(loss);
  EXPECT_TRUE(g1.at(w).same_values(g2.at(w)));
  EXPECT_TRUE(g1.at(x).same_values(g2.at(x)));
}

TEST(Backward, FaultInjectionIsVisible) {
  auto x = random_tensor<double>(Shape{1, 2, 5, 5}, 91);
  auto w = random_tensor<double>(Shape{2, 2, 3, 3}, 92);
  GradcheckFn f = [](const std::vector<T64>& in) { return conv2d(in[0], in[1], T64(), 1, 1); };
  ScopedGradientFault fault("conv2d");
  EXPECT_GT(gradcheck_error(f, {x, w}, fd()), 1e-3);
}

}  // namespace
}  // namespace exposura
