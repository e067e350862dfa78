#include <gtest/gtest.h>

#include "dejavu/crm/crm.hpp"
#include "gradcheck.hpp"

using namespace dejavu;
using namespace dejavu::crm;
using ag::Var;

namespace {

Tensor<double> random_tensor(Shape s, SeededRng& rng, double lo = 0, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

CrmConfig small_config(Mode mode, Combine combine, int cond_channels) {
  CrmConfig c;
  c.mode = mode;
  c.combine = combine;
  c.width = 4;
  c.depth = 2;
  c.steps = 3;
  c.condition_channels = cond_channels;
  return c;
}

}  // namespace

TEST(Combine, MultiplyAndConcat) {
  SeededRng rng(1);
  DenseCondition<double> cond(random_tensor({4, 2, 2}, rng), TaskKind::segmentation);
  ImageTensor<double> ones(3, 2, 2, 1.0), zeros(3, 2, 2, 0.0);
  EXPECT_EQ(combine_inputs(ones, cond, Combine::multiply), cond.data);
  EXPECT_EQ(combine_inputs(zeros, cond, Combine::multiply).max_abs(), 0.0);
  auto img = ImageTensor<double>(random_tensor({3, 2, 2}, rng));
  auto cat = combine_inputs(img, cond, Combine::concat);
  ASSERT_EQ(cat.shape(), (Shape{7, 2, 2}));
  for (int c = 0; c < 7; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) EXPECT_EQ(cat.at(c, y, x), c < 3 ? img.at(c, y, x) : cond.data.at(c - 3, y, x));
  // multiply uses the channel mean of the image
  auto mul = combine_inputs(img, cond, Combine::multiply);
  const double m = (img.at(0, 1, 0) + img.at(1, 1, 0) + img.at(2, 1, 0)) / 3;
  EXPECT_NEAR(mul.at(2, 1, 0), m * cond.data.at(2, 1, 0), 1e-15);
  DenseCondition<double> wrong(Tensor<double>(Shape{4, 3, 2}), TaskKind::segmentation);
  EXPECT_THROW(combine_inputs(img, wrong, Combine::concat), DimensionError);
}

TEST(CrmForward, ShapeAndZeroHead) {
  SeededRng rng(2);
  for (auto combine : {Combine::multiply, Combine::concat}) {
    auto cfg = small_config(Mode::forward, combine, 2);
    CrmParams<double> p(cfg, rng);
    auto img = ag::constant(random_tensor({2, 3, 6, 5}, rng));
    auto cond = ag::constant(random_tensor({2, 2, 6, 5}, rng));
    auto out = crm_forward(img, cond, p, cfg, true);
    EXPECT_EQ(out.shape(), img.shape());
    p.head.weight.mutable_value().fill(0.0);
    p.head.bias.mutable_value() = Tensor<double>(Shape{3}, std::vector<double>{0.25, -0.5, 2.0});
    auto z = crm_forward(img, cond, p, cfg, true).value();
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 6; ++y)
          for (int x = 0; x < 5; ++x) EXPECT_EQ(z.at(n, c, y, x), p.head.bias.value()[c]);
  }
}

TEST(CrmForward, MeanOutputDependsOnCondition) {
  SeededRng rng(3);
  auto cfg = small_config(Mode::forward, Combine::multiply, 1);
  CrmParams<double> p(cfg, rng);
  auto img = ag::constant(random_tensor({1, 3, 4, 4}, rng));
  Tensor<double> c = random_tensor({1, 1, 4, 4}, rng);
  auto f = [&](const Tensor<double>& cv) {
    return ag::mean_all(crm_forward(img, ag::constant(cv), p, cfg, false)).item();
  };
  double max_probe = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    Tensor<double> a = c, b = c;
    a[i] += 1e-5;
    b[i] -= 1e-5;
    max_probe = std::max(max_probe, std::abs((f(a) - f(b)) / 2e-5));
  }
  EXPECT_GT(max_probe, 1e-6);
}

TEST(CrmRecursive, EmptyRecursionAndZeroResidual) {
  SeededRng rng(4);
  for (auto combine : {Combine::multiply, Combine::concat}) {
    auto cfg = small_config(Mode::recursive, combine, 3);
    CrmParams<double> p(cfg, rng);
    auto img = ag::constant(random_tensor({2, 3, 4, 4}, rng));
    auto cond = ag::constant(random_tensor({2, 3, 4, 4}, rng));
    cfg.steps = 0;
    EXPECT_EQ(crm_recursive(img, cond, p, cfg, true).value(), img.value());
    p.zero_head();
    for (int T : {1, 8}) {
      cfg.steps = T;
      EXPECT_EQ(crm_recursive(img, cond, p, cfg, true).value(), img.value());
    }
  }
}

TEST(CrmRecursive, LongRecursionStaysFinite) {
  SeededRng rng(5);
  auto cfg = small_config(Mode::recursive, Combine::concat, 2);
  cfg.steps = 8;
  CrmParams<double> p(cfg, rng);
  auto img = ag::constant(random_tensor({2, 3, 8, 8}, rng));
  auto cond = ag::constant(random_tensor({2, 2, 8, 8}, rng));
  Var<double> x = img;
  const auto combined = combine_inputs(img, cond, cfg.combine);
  for (int k = 0; k < cfg.steps; ++k) {
    auto next = ag::add(x, p.head(p.blocks[0](ag::concat_channels<double>({x, combined}), true)));
    const double step = (next.value() - x.value()).squared_norm();
    EXPECT_TRUE(std::isfinite(step));
    x = next;
  }
  auto out = crm_recursive(img, cond, p, cfg, true).value();
  EXPECT_TRUE(out.all_finite());
  EXPECT_LT(max_abs_diff(out, x.value()), 1e-12);
}

TEST(Crm, GradientsReachConditionInAllConfigurations) {
  for (auto mode : {Mode::forward, Mode::recursive})
    for (auto combine : {Combine::multiply, Combine::concat}) {
      SeededRng rng(6);
      auto cfg = small_config(mode, combine, 2);
      CrmParams<double> p(cfg, rng);
      auto img = ag::constant(random_tensor({2, 3, 4, 4}, rng));
      auto cond = ag::leaf(random_tensor({2, 2, 4, 4}, rng), true);
      auto r = dejavu::testing::gradcheck(
          [&] { return ag::mean_all(ag::square(crm_apply(img, cond, p, cfg, true))); }, {cond});
      EXPECT_LT(r.max_rel, 1e-4) << to_string(mode) << " " << to_string(combine);
      EXPECT_GT(cond.value().size(), 0u);
    }
}

TEST(Crm, ParameterInventory) {
  SeededRng rng(7);
  auto fwd = small_config(Mode::forward, Combine::concat, 2);
  fwd.depth = 1;
  auto rec = small_config(Mode::recursive, Combine::concat, 2);
  rec.steps = 1;
  CrmParams<double> pf(fwd, rng), pr(rec, rng);
  const auto nf = pf.parameters().count(), nr = pr.parameters().count();
  // Same single block and head; the recursive block also reads the 3-channel
  // running estimate.
  EXPECT_EQ(nr - nf, static_cast<std::size_t>(3 * rec.width * 9));
  EXPECT_EQ(pf.parameters().params().size(), pr.parameters().params().size());

  rec.steps = 8;
  CrmParams<double> p8(rec, rng);
  EXPECT_EQ(p8.blocks.size(), 1u);
  EXPECT_EQ(p8.parameters().count(), nr);
  fwd.depth = 3;
  EXPECT_EQ(CrmParams<double>(fwd, rng).blocks.size(), 3u);
}

TEST(CrmRecursive, SharedBlockReceivesGradientFromEveryStep) {
  SeededRng rng(8);
  auto cfg = small_config(Mode::recursive, Combine::multiply, 1);
  CrmParams<double> p(cfg, rng);
  auto img = ag::constant(random_tensor({1, 3, 4, 4}, rng));
  auto cond = ag::constant(random_tensor({1, 1, 4, 4}, rng));
  auto grad_at = [&](int steps) {
    cfg.steps = steps;
    p.parameters().zero_grad();
    ag::backward(ag::mean_all(crm_recursive(img, cond, p, cfg, true)));
    return p.blocks[0].conv.weight.grad();
  };
  const auto g1 = grad_at(1), g3 = grad_at(3);
  EXPECT_GT(max_abs_diff(g1, g3), 0.0);
  // The handle in the inventory is the very tensor the recursion uses.
  EXPECT_EQ(p.parameters().find("crm.block0.conv.weight")->var.node(), p.blocks[0].conv.weight.node());
}

TEST(Crm, ConfigErrors) {
  SeededRng rng(9);
  auto cfg = small_config(Mode::forward, Combine::multiply, 2);
  CrmParams<double> p(cfg, rng);
  auto img = ag::constant(random_tensor({1, 3, 4, 4}, rng));
  auto cond = ag::constant(random_tensor({1, 3, 4, 4}, rng));
  EXPECT_THROW(crm_forward(img, cond, p, cfg, true), ConfigError);
  EXPECT_THROW(crm_recursive(img, cond, p, cfg, true), ConfigError);
  cfg.width = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Crm, DefaultModePerRedaction) {
  EXPECT_EQ(default_mode_for(RedactionSpec::spatial_random(0.5)), Mode::recursive);
  EXPECT_EQ(default_mode_for(RedactionSpec::random_blocks(4)), Mode::forward);
  EXPECT_EQ(default_mode_for(RedactionSpec::checkerboard(4)), Mode::forward);
  EXPECT_EQ(default_mode_for(RedactionSpec::spectral(RedactionVariant::bandstop, 0.2, 0.4)), Mode::forward);
}
