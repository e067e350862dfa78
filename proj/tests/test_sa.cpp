#include <gtest/gtest.h>

#include <set>

#include "dejavu/sa/shared_attention.hpp"
#include "gradcheck.hpp"

using namespace dejavu;
using namespace dejavu::sa;
using ag::Var;

namespace {

Tensor<double> random_tensor(Shape s, SeededRng& rng, double lo = 0, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

SaConfig small_config(int patch = 2, int dim = 8, int heads = 2) {
  SaConfig c;
  c.enabled = true;
  c.patch = patch;
  c.dim = dim;
  c.heads = heads;
  return c;
}

double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(SharedAttention, OutputShapesAndTokenCount) {
  SeededRng rng(1);
  const tasks::ConditionLayout layout(tasks::TaskSet::segmentation, 3);
  auto cfg = small_config(4, 8, 2);
  SaParams<double> p(cfg, 3, rng);
  auto img = ag::constant(random_tensor({2, 3, 8, 12}, rng));
  auto cond = ag::constant(random_tensor({2, 3, 8, 12}, rng));
  Tensor<double> attn_e, attn_r;
  auto enh = sa_enhancement_pass(img, cond, p, cfg, layout, &attn_e);
  auto reg = sa_regeneration_pass(img, cond, p, cfg, &attn_r);
  EXPECT_EQ(enh.shape(), (Shape{2, 3, 8, 12}));
  EXPECT_EQ(reg.shape(), (Shape{2, 3, 8, 12}));
  // (8/4) * (12/4) = 6 tokens per image on both sides
  EXPECT_EQ(attn_e.shape(), (Shape{2, 2, 6, 6}));
  EXPECT_EQ(attn_r.shape(), (Shape{2, 2, 6, 6}));
  EXPECT_EQ(ag::patchify(img, 4).shape(), (Shape{2, 6, 48}));
}

TEST(SharedAttention, AttentionRowsAreDistributions) {
  SeededRng rng(2);
  const tasks::ConditionLayout layout(tasks::TaskSet::segmentation, 3);
  auto cfg = small_config();
  SaParams<double> p(cfg, 3, rng);
  auto img = ag::constant(random_tensor({1, 3, 8, 8}, rng));
  auto cond = ag::constant(random_tensor({1, 3, 8, 8}, rng));
  Tensor<double> attn;
  sa_enhancement_pass(img, cond, p, cfg, layout, &attn);
  const int L = attn.dim(3);
  for (int h = 0; h < attn.dim(1); ++h)
    for (int q = 0; q < attn.dim(2); ++q) {
      double s = 0;
      for (int k = 0; k < L; ++k) {
        EXPECT_GE(attn.at(0, h, q, k), 0.0);
        s += attn.at(0, h, q, k);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(SharedAttention, SinglePatchAttendsWithWeightOne) {
  SeededRng rng(3);
  auto cfg = small_config(4, 8, 2);
  SaParams<double> p(cfg, 3, rng);
  auto img = ag::constant(random_tensor({1, 3, 4, 4}, rng));
  auto cond = ag::constant(random_tensor({1, 3, 4, 4}, rng));
  Tensor<double> attn;
  auto before = sa_regeneration_pass(img, cond, p, cfg, &attn).value();
  for (double a : attn.vec()) EXPECT_EQ(a, 1.0);
  // with one key the output is independent of the query side
  for (auto& w : p.q_r.proj.weight.mutable_value().vec()) w += 0.5;
  EXPECT_LT(max_diff(sa_regeneration_pass(img, cond, p, cfg).value(), before), 1e-12);
}

TEST(SharedAttention, EnhancedPredictionsKeepTaskRanges) {
  SeededRng rng(4);
  const tasks::ConditionLayout layout(tasks::TaskSet::multitask, 3);
  auto cfg = small_config();
  SaParams<double> p(cfg, layout.channels(), rng);
  auto img = ag::constant(random_tensor({2, 3, 6, 6}, rng));
  auto cond = ag::constant(random_tensor({2, layout.channels(), 6, 6}, rng));
  const auto out = sa_enhancement_pass(img, cond, p, cfg, layout).value();
  const auto* seg = layout.find(TaskKind::segmentation);
  const auto* dep = layout.find(TaskKind::depth);
  const auto* nor = layout.find(TaskKind::normals);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        double s = 0, nn2 = 0;
        for (int c = seg->begin; c < seg->end; ++c) s += out.at(n, c, y, x);
        for (int c = nor->begin; c < nor->end; ++c) nn2 += out.at(n, c, y, x) * out.at(n, c, y, x);
        EXPECT_NEAR(s, 1.0, 1e-12);
        // unit length, or zero where the raw decoder output vanishes
        EXPECT_TRUE(std::abs(nn2 - 1.0) < 1e-9 || nn2 == 0.0) << nn2;
        EXPECT_GT(out.at(n, dep->begin, y, x), 0.0);
      }
}

TEST(SharedAttention, OneMhaInstanceServesBothPasses) {
  SeededRng rng(5);
  auto cfg = small_config();
  SaParams<double> p(cfg, 3, rng);
  const auto ps = p.parameters();
  std::set<std::string> names;
  int mha_entries = 0;
  for (const auto& e : ps.params()) {
    EXPECT_TRUE(names.insert(e.name).second) << e.name;
    if (e.name.starts_with("sa.mha.")) ++mha_entries;
  }
  EXPECT_EQ(mha_entries, 8);  // four projections, weight and bias each
  EXPECT_EQ(ps.find("sa.mha.wq.weight")->var.node(), p.mha.wq.weight.node());
  // six distinct embedders
  std::set<const void*> embed_nodes;
  for (const auto* e : {&p.q, &p.k, &p.v, &p.q_r, &p.k_r, &p.v_r}) embed_nodes.insert(e->proj.weight.node());
  EXPECT_EQ(embed_nodes.size(), 6u);
  const std::size_t d = 8, hid = cfg.decoder_hidden(), pp = 4;
  const std::size_t expected = (3 * pp * d + d) * 2 + (3 * pp * d + d) * 4 + 4 * (d * d + d) +
                               (d * hid * pp + hid) + (hid * 3 + 3) + (d * hid * pp + hid) + (hid * 3 + 3);
  EXPECT_EQ(ps.count(), expected);
}

TEST(SharedAttention, PerturbingMhaChangesBothPasses) {
  SeededRng rng(6);
  const tasks::ConditionLayout layout(tasks::TaskSet::segmentation, 3);
  auto cfg = small_config();
  SaParams<double> p(cfg, 3, rng);
  auto img = ag::constant(random_tensor({1, 3, 8, 8}, rng));
  auto cond = ag::constant(random_tensor({1, 3, 8, 8}, rng));
  const auto e0 = sa_enhancement_pass(img, cond, p, cfg, layout).value();
  const auto r0 = sa_regeneration_pass(img, cond, p, cfg).value();
  p.mha.wv.weight.mutable_value()[3] += 0.25;
  EXPECT_GT(max_diff(sa_enhancement_pass(img, cond, p, cfg, layout).value(), e0), 1e-6);
  EXPECT_GT(max_diff(sa_regeneration_pass(img, cond, p, cfg).value(), r0), 1e-6);
}

TEST(SharedAttention, MhaGradientAccumulatesFromBothPasses) {
  SeededRng rng(7);
  const tasks::ConditionLayout layout(tasks::TaskSet::segmentation, 3);
  auto cfg = small_config();
  SaParams<double> p(cfg, 3, rng);
  auto img = ag::constant(random_tensor({1, 3, 8, 8}, rng));
  auto cond = ag::constant(random_tensor({1, 3, 8, 8}, rng));
  auto& wq = p.mha.wq.weight;
  auto enh = [&] { return ag::mean_all(ag::square(sa_enhancement_pass(img, cond, p, cfg, layout))); };
  auto reg = [&] { return ag::mean_all(ag::square(sa_regeneration_pass(img, cond, p, cfg))); };
  wq.zero_grad();
  ag::backward(enh());
  const auto ge = wq.grad();
  wq.zero_grad();
  ag::backward(reg());
  const auto gr = wq.grad();
  wq.zero_grad();
  ag::backward(ag::add(enh(), reg()));
  const auto both = wq.grad();
  EXPECT_GT(ge.max_abs(), 0.0);
  EXPECT_GT(gr.max_abs(), 0.0);
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_NEAR(both[i], ge[i] + gr[i], 1e-14);
}

TEST(SharedAttention, EmbedderGradientsMatchFiniteDifferences) {
  SeededRng rng(8);
  const tasks::ConditionLayout layout(tasks::TaskSet::segmentation, 3);
  auto cfg = small_config();
  SaParams<double> p(cfg, 3, rng);
  auto img = ag::constant(random_tensor({2, 3, 4, 4}, rng));
  auto cond = ag::leaf(random_tensor({2, 3, 4, 4}, rng), true);
  auto loss = [&] {
    return ag::add(ag::mean_all(ag::square(sa_enhancement_pass(img, cond, p, cfg, layout))),
                   ag::mean_all(ag::square(sa_regeneration_pass(img, cond, p, cfg))));
  };
  std::vector<Var<double>> inputs{cond};
  for (const auto* e : {&p.q, &p.k, &p.v, &p.q_r, &p.k_r, &p.v_r}) {
    inputs.push_back(e->proj.weight);
    inputs.push_back(e->proj.bias);
  }
  auto r = dejavu::testing::gradcheck(loss, inputs, 1e-5, 1e-5);
  EXPECT_LT(r.max_rel, 1e-4) << "input " << r.worst_input << " analytic " << r.worst_analytic << " numeric "
                             << r.worst_numeric;
}

TEST(SharedAttention, InferenceMacsMatchHandCount) {
  // patch 2, dim 4, 4x4 image, 3 prediction channels: 4 tokens, decoder hidden 8
  //   embeddings     4*12*4 + 2*4*12*4 = 576
  //   projections    4 * 4*4*4         = 256
  //   QK^T and AV    2 * 4*4*4         = 128
  //   decoder        4*4*8*4 + 16*8*3  = 896
  EXPECT_EQ(sa_inference_macs(small_config(2, 4, 2), 4, 4, 3), 1856u);
  // attention grows quadratically in the token count
  const auto a = sa_inference_macs(small_config(2, 4, 2), 8, 8, 3);
  EXPECT_EQ(a, 16u * 12 * 4 * 3 + 4u * 16 * 16 + 2u * 16 * 16 * 4 + 16u * 4 * 8 * 4 + 64u * 8 * 3);
}

TEST(SharedAttention, ConfigValidation) {
  auto cfg = small_config(4, 8, 3);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(3, 8, 2);
  EXPECT_THROW(cfg.validate_for(8, 8), ConfigError);
  cfg = small_config();
  cfg.spectral_spec = RedactionSpec::random_blocks(4);
  EXPECT_THROW(cfg.validate(), ConfigError);
}
