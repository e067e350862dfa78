#include <gtest/gtest.h>

#include "dejavu/nn/module.hpp"
#include "gradcheck.hpp"

using namespace dejavu;
using ag::Var;

namespace {

Tensor<double> random_tensor(Shape s, SeededRng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

Var<double> param(Shape s, SeededRng& rng, double lo = -1, double hi = 1) {
  return ag::leaf(random_tensor(std::move(s), rng, lo, hi), true);
}

// Projects a tensor to a scalar with fixed random weights so every output
// entry influences the checked gradient.
Var<double> project(const Var<double>& x, std::uint64_t seed = 99) {
  SeededRng rng(seed);
  auto w = ag::constant(random_tensor(x.shape(), rng));
  return ag::sum_all(ag::mul(x, w));
}

}  // namespace

TEST(Autograd, ElementwiseGradients) {
  SeededRng rng(1);
  auto a = param({2, 3, 2, 2}, rng), b = param({2, 3, 2, 2}, rng);
  auto r = dejavu::testing::gradcheck(
      [&] {
        auto x = ag::add(ag::mul(a, b), ag::scale(ag::sub(a, b), 0.7));
        return project(ag::add(ag::exp(ag::scale(x, 0.3)), ag::square(x)));
      },
      {a, b});
  EXPECT_LT(r.max_rel, 1e-6);
}

TEST(Autograd, ChannelOpsGradients) {
  SeededRng rng(2);
  auto img = param({2, 3, 3, 3}, rng), cond = param({2, 4, 3, 3}, rng);
  auto r = dejavu::testing::gradcheck(
      [&] {
        auto m = ag::broadcast_mul(ag::channel_mean(img), cond);
        auto c = ag::concat_channels<double>({img, m});
        auto s = ag::softmax_channels(ag::slice_channels(c, 1, 6));
        return ag::add(project(s), project(ag::l2_normalize_channels(c), 7));
      },
      {img, cond});
  EXPECT_LT(r.max_rel, 1e-6);
}

TEST(Autograd, ConvAndTransposedConvGradients) {
  SeededRng rng(3);
  auto x = param({2, 3, 6, 6}, rng);
  auto w = param({4, 3, 3, 3}, rng), b = param({4}, rng);
  auto wt = param({4, 2, 2, 2}, rng), bt = param({2}, rng);
  auto r = dejavu::testing::gradcheck(
      [&] {
        auto h = ag::conv2d(x, w, b, 2, 1);
        return project(ag::conv_transpose2d(h, wt, bt, 2, 0));
      },
      {x, w, b, wt, bt});
  EXPECT_LT(r.max_rel, 1e-6);
}

TEST(Autograd, TransposedConvIsAdjointOfConv) {
  SeededRng rng(4);
  auto x = random_tensor({1, 2, 5, 5}, rng);
  auto y = random_tensor({1, 3, 3, 3}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto zero3 = ag::constant(Tensor<double>(Shape{3}));
  auto zero2 = ag::constant(Tensor<double>(Shape{2}));
  // <conv(x), y> == <x, conv^T(y)> with the same weights.
  auto cx = ag::conv2d(ag::constant(x), ag::constant(w), zero3, 2, 1).value();
  auto w_t = w.reshaped({3, 2, 3, 3});
  auto cty = ag::conv_transpose2d(ag::constant(y), ag::constant(w_t), zero2, 2, 1).value();
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < cty.size(); ++i) rhs += cty[i] * x[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Autograd, BatchNormGradientsTrainAndEval) {
  SeededRng rng(5);
  auto x = param({3, 2, 3, 3}, rng);
  auto g = param({2}, rng, 0.5, 1.5), b = param({2}, rng);
  ag::BatchNormState<double> st;
  st.running_mean = Tensor<double>(Shape{2});
  st.running_var = Tensor<double>::ones({2});
  for (bool training : {true, false}) {
    auto r = dejavu::testing::gradcheck([&] { return project(ag::batch_norm(x, g, b, st, training)); }, {x, g, b});
    EXPECT_LT(r.max_rel, 1e-6) << "training=" << training;
  }
}

TEST(Autograd, BatchNormNormalizesBatchStatistics) {
  SeededRng rng(6);
  auto x = ag::constant(random_tensor({4, 2, 3, 3}, rng, 2, 5));
  nn::BatchNorm2d<double> bn(2);
  auto y = bn(x, true).value();
  for (int c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        const double v = y[(n * 2 + c) * 9 + i];
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / 36, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 36, 1.0, 1e-3);
  }
  EXPECT_NE(bn.state->running_mean[0], 0.0);
}

TEST(Autograd, AttentionGradients) {
  SeededRng rng(7);
  auto x = param({2, 2, 4, 4}, rng), c = param({2, 3, 4, 4}, rng);
  auto wq = param({12, 8}, rng), bq = param({8}, rng);
  auto wk = param({8, 8}, rng), bk = param({8}, rng);
  auto r = dejavu::testing::gradcheck(
      [&] {
        auto q = ag::linear(ag::patchify(c, 2), wq, bq);
        auto kv = ag::linear(ag::linear(ag::patchify(x, 2), ag::constant(Tensor<double>(Shape{8, 8}, 0.1)),
                                        ag::constant(Tensor<double>(Shape{8}))),
                             wk, bk);
        auto o = ag::multi_head_attention_core(q, kv, ag::scale(kv, 0.5), 2);
        return project(ag::tokens_to_grid(o, 2, 2));
      },
      {x, c, wq, bq, wk, bk});
  EXPECT_LT(r.max_rel, 1e-6);
}

TEST(Autograd, LossOpGradients) {
  SeededRng rng(8);
  auto logits = param({2, 3, 3, 3}, rng);
  auto dlog = param({2, 1, 3, 3}, rng);
  auto nraw = param({2, 3, 3, 3}, rng);
  Tensor<int> labels(Shape{2, 3, 3});
  for (auto& l : labels.vec()) l = static_cast<int>(rng.uniform_int(3));
  Tensor<double> valid = Tensor<double>::ones({2, 3, 3});
  valid[4] = 0;
  Tensor<double> target = random_tensor({2, 1, 3, 3}, rng, 1, 2);
  Tensor<double> ntarget = ag::l2_normalize_channels(ag::constant(random_tensor({2, 3, 3, 3}, rng))).value();
  auto r = dejavu::testing::gradcheck(
      [&] {
        auto ce = ag::cross_entropy_prob(ag::softmax_channels(logits), labels, valid);
        auto l1 = ag::masked_l1(ag::exp(dlog), target, valid);
        auto cs = ag::masked_cosine(ag::l2_normalize_channels(nraw), ntarget, valid);
        return ag::weighted_sum<double>({ce, l1, cs}, {1.0, 0.5, 2.0});
      },
      {logits, dlog, nraw});
  EXPECT_LT(r.max_rel, 1e-5);
}

TEST(Autograd, SharedLeafAccumulatesFromBothUses) {
  auto p = ag::leaf(Tensor<double>(Shape{1}, 3.0), true);
  auto loss = ag::add(ag::square(p), ag::scale(p, 2.0));
  ag::backward(loss);
  EXPECT_DOUBLE_EQ(p.grad()[0], 2 * 3.0 + 2.0);
}

TEST(Autograd, ShapeErrors) {
  auto a = ag::constant(Tensor<double>(Shape{1, 2, 2, 2}));
  auto b = ag::constant(Tensor<double>(Shape{1, 3, 2, 2}));
  EXPECT_THROW(ag::add(a, b), DimensionError);
  auto w = ag::constant(Tensor<double>(Shape{4, 5, 3, 3}));
  EXPECT_THROW(ag::conv2d(a, w, ag::constant(Tensor<double>(Shape{4})), 1, 1), DimensionError);
  EXPECT_THROW(ag::patchify(a, 3), ConfigError);
}
