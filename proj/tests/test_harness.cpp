#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dejavu/dejavu.hpp"

using namespace dejavu;
using namespace dejavu::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dejavu_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

TrainConfig tiny(const std::string& name = "run") {
  TrainConfig c;
  c.task = tasks::TaskSet::segmentation;
  c.data.height = c.data.width = 16;
  c.data.num_shapes = 2;
  c.data.train = 16;
  c.data.val = 8;
  c.basenet_width = 4;
  c.basenet_levels = 2;
  c.redaction = RedactionSpec::random_blocks(4);
  c.crm_width = 4;
  c.crm_depth = 1;
  c.crm_steps = 2;
  c.optim.epochs = 2;
  c.optim.batch = 4;
  c.out = scratch(name).string();
  return c;
}

}  // namespace

TEST(Config, RoundTrip) {
  TrainConfig c = tiny();
  c.task = tasks::TaskSet::multitask;
  c.seed = 42;
  c.crm_mode = crm::Mode::recursive;
  c.crm_combine = crm::Combine::multiply;
  c.redaction = RedactionSpec::spectral(RedactionVariant::bandstop, 0.125, 0.6);
  c.loss.gamma = 0.3;
  c.loss.use_text = true;
  c.sa.enabled = true;
  c.sa.dim = 16;
  c.sa.spectral_spec = RedactionSpec::spectral(RedactionVariant::lowpass, 0.0, 0.35);
  c.optim.lr = 3.3e-4;
  c.experiment.id = "exp-a";
  const auto text = serialize_config(c);
  EXPECT_EQ(parse_config(text), c);
  EXPECT_EQ(serialize_config(parse_config(text)), text);
  TrainConfig d;
  EXPECT_EQ(parse_config(serialize_config(d)), d);
  EXPECT_EQ(parse_config(""), d);
}

TEST(Config, ParsingRules) {
  EXPECT_THROW(parse_config("bogus.key = 1"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2"), ConfigError);
  EXPECT_THROW(parse_config("seed"), ConfigError);
  EXPECT_THROW(parse_config("optim.epochs = many"), ConfigError);
  EXPECT_THROW(parse_config("crm.mode = sideways"), ConfigError);
  EXPECT_THROW(parse_config("redaction.domain = spectral\nredaction.variant = bandstop\nredaction.band_lo = 0.6\n"
                            "redaction.band_hi = 0.2"),
               ConfigError);
  const auto c = parse_config("# comment\n  data.size = 32   # trailing\nloss.gamma=0.25\n");
  EXPECT_EQ(c.data.height, 32);
  EXPECT_EQ(c.data.width, 32);
  EXPECT_EQ(c.loss.gamma, 0.25);
  EXPECT_THROW(load_config("/nonexistent/x.cfg"), IoError);
}

TEST(Config, Validation) {
  auto c = tiny();
  EXPECT_NO_THROW(c.validate());
  c.optim.epochs = 0;  // evaluation only
  EXPECT_NO_THROW(c.validate());
  c.optim.epochs = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.sa.enabled = true;
  c.sa.patch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.loss.gamma = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, SameSeedGivesIdenticalMetrics) {
  auto a = tiny("det_a"), b = tiny("det_b");
  train(a);
  train(b);
  const auto ca = slurp(fs::path(a.out) / "metrics.csv");
  EXPECT_EQ(ca, slurp(fs::path(b.out) / "metrics.csv"));
  EXPECT_EQ(count_lines(ca), 1 + 2 * 3);  // header, then loss, base_loss, miou per epoch
  auto c = tiny("det_c");
  c.seed = 1;
  train(c);
  EXPECT_NE(ca, slurp(fs::path(c.out) / "metrics.csv"));
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  auto full = tiny("resume_full"), part = tiny("resume_part");
  full.optim.epochs = part.optim.epochs = 3;
  const auto data = tasks::generate_synthetic_dataset<float>(full.data);
  const auto rf = train<float>(full, data);
  TrainOptions stop;
  stop.stop_after_epochs = 1;
  train<float>(part, data, stop);
  EXPECT_EQ(read_checkpoint_info(fs::path(part.out) / "checkpoint.bin").epoch, 1);
  // a stale row from a crashed epoch is discarded on resume
  {
    std::ofstream os(fs::path(part.out) / "metrics.csv", std::ios::app);
    os << "2,train,segmentation,loss,123\n";
  }
  TrainOptions resume;
  resume.resume = true;
  const auto rp = train<float>(part, data, resume);
  EXPECT_EQ(slurp(fs::path(full.out) / "metrics.csv"), slurp(fs::path(part.out) / "metrics.csv"));
  EXPECT_EQ(rf.final_metrics.at(TaskKind::segmentation).miou, rp.final_metrics.at(TaskKind::segmentation).miou);
  auto [cf, mf] = load_model<float>(fs::path(full.out) / "checkpoint.bin");
  auto [cp, mp] = load_model<float>(fs::path(part.out) / "checkpoint.bin");
  EXPECT_EQ(mf.trainable().hash(), mp.trainable().hash());
  // a checkpoint from a different config is refused
  auto other = part;
  other.loss.gamma = 0.7;
  EXPECT_THROW(train<float>(other, data, resume), ConfigError);
}

TEST(Trainer, ZeroGammaMatchesPlainSupervisedTraining) {
  auto cfg = tiny("gamma0");
  cfg.loss.gamma = 0;
  cfg.optim.epochs = 13;  // 52 steps available, 50 used
  const auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
  const int steps = 50, B = cfg.optim.batch, n = cfg.data.train;
  const long horizon = static_cast<long>(cfg.optim.epochs) * steps_per_epoch(cfg);

  // plain loop: base network, base loss, Adam; nothing else
  SeededRng rb = SeededRng(cfg.seed).substream("init").substream("basenet");
  tasks::BaseNet<float> net(cfg.basenet(), rb);
  nn::AdamOptions ao;
  ao.lr = cfg.optim.lr;
  ao.total_steps = horizon;
  nn::Adam<float> opt(net.parameters(), ao);
  for (int s = 0; s < steps; ++s) {
    const int epoch = s / (n / B), off = (s % (n / B)) * B;
    const auto order = SeededRng(cfg.seed).substream("data").derive(static_cast<std::uint64_t>(epoch)).permutation(n);
    auto b = make_batch(data.train, std::vector<int>(order.begin() + off, order.begin() + off + B));
    auto loss = tasks::base_loss(tasks::BaseOutputs<float>{net.forward(ag::constant(b.images), true).cond}, b.gt,
                                 net.layout());
    opt.zero_grad();
    ag::backward(loss);
    opt.step();
  }

  for (bool force : {false, true}) {
    TrainOptions to;
    to.write_files = false;
    to.force_regen_graph = force;
    Trainer<float> t(cfg, data, to);
    ASSERT_TRUE(t.model().crm.has_value());
    for (int s = 0; s < steps; ++s) {
      const int epoch = s / (n / B), off = (s % (n / B)) * B;
      const auto order = t.epoch_order(epoch);
      t.step(std::vector<int>(order.begin() + off, order.begin() + off + B));
    }
    const auto a = net.parameters(), b = t.model().basenet.parameters();
    ASSERT_EQ(a.params().size(), b.params().size());
    for (std::size_t k = 0; k < a.params().size(); ++k)
      EXPECT_EQ(a.params()[k].var.value(), b.params()[k].var.value()) << a.params()[k].name << " force " << force;
    for (std::size_t k = 0; k < a.buffers().size(); ++k) {
      EXPECT_EQ(a.buffers()[k].state->running_mean, b.buffers()[k].state->running_mean);
      EXPECT_EQ(a.buffers()[k].state->running_var, b.buffers()[k].state->running_var);
    }
  }
}

TEST(Trainer, FrozenBaseNetStillTrainsRegenerator) {
  auto cfg = tiny("frozen_base");
  cfg.loss.gamma = 0.5;
  const auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
  TrainOptions to;
  to.write_files = false;
  to.freeze_basenet = true;
  Trainer<float> t(cfg, data, to);
  const auto b0 = t.model().basenet.parameters().hash(), c0 = t.model().crm->parameters().hash();
  for (int s = 0; s < 3; ++s) t.step({0, 1, 2, 3});
  EXPECT_EQ(t.model().basenet.parameters().hash(), b0);
  EXPECT_NE(t.model().crm->parameters().hash(), c0);
}

TEST(Trainer, FrozenModulesNeverChange) {
  auto cfg = tiny("frozen_aux");
  cfg.loss.use_text = cfg.loss.use_cyclic = true;
  const auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
  TrainOptions to;
  to.write_files = false;
  Trainer<float> t(cfg, data, to);
  const auto f0 = t.model().frozen().hash(), b0 = t.model().basenet.parameters().hash();
  for (int s = 0; s < 10; ++s) {
    auto l = t.step({s % 16, (s + 3) % 16});
    ASSERT_TRUE(l.text.defined());
    ASSERT_TRUE(l.cyc.defined());
  }
  EXPECT_EQ(t.model().frozen().hash(), f0);
  EXPECT_NE(t.model().basenet.parameters().hash(), b0);
}

TEST(Trainer, OverfitsSmallSet) {
  auto cfg = tiny("overfit");
  cfg.basenet_width = 8;
  cfg.optim.lr = 1e-2;
  cfg.optim.epochs = 50;  // 4 steps per epoch
  const auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
  TrainOptions to;
  to.write_files = false;
  const auto rec = train<float>(cfg, data, to);
  ASSERT_EQ(rec.step_losses.size(), 200u);
  const double first = rec.step_losses.front();
  double last = 0;
  for (std::size_t i = 196; i < 200; ++i) last += rec.step_losses[i] / 4;
  EXPECT_LT(last, 0.5 * first) << first << " -> " << last;
}

TEST(Trainer, SaRunReportsEnhancedPredictions) {
  auto cfg = tiny("sa_run");
  cfg.sa.enabled = true;
  cfg.sa.patch = 4;
  cfg.sa.dim = 8;
  cfg.sa.heads = 2;
  cfg.optim.epochs = 1;
  const auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
  TrainOptions to;
  to.write_files = false;
  Trainer<float> t(cfg, data, to);
  const auto rec = t.run();
  const auto& m = t.model();
  const auto layout = m.basenet.layout();
  tasks::MetricAccumulator enh(cfg.data.shape_classes), base(cfg.data.shape_classes);
  std::vector<int> idx(data.val.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto b = make_batch(data.val, idx);
  auto img = ag::constant(b.images);
  auto c = m.basenet.forward(img, false).cond;
  tasks::accumulate_batch(enh, sa::sa_enhancement_pass(img, c, *m.sa, cfg.sa, layout).value(), layout, b.items);
  tasks::accumulate_batch(base, c.value(), layout, b.items);
  EXPECT_NEAR(*rec.final_metrics.at(TaskKind::segmentation).miou, *enh.result().miou, 1e-12);
  auto l = compute_losses(m, cfg, img, b.gt, SeededRng(0));
  EXPECT_FALSE(l.final_pred.value() == l.cond.value());
  EXPECT_TRUE(l.regen.defined());
}

TEST(Trainer, NonFiniteLossNamesTheStep) {
  auto cfg = tiny("nan");
  auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
  data.train[2].image.data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainOptions to;
  to.write_files = false;
  Trainer<float> t(cfg, data, to);
  try {
    t.step({2, 3});
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(data.train[2].seed)), std::string::npos) << msg;
  }
}

TEST(Experiments, AblationWritesGrid) {
  auto cfg = tiny();
  cfg.data.train = 8;
  cfg.data.val = 4;
  cfg.optim.epochs = 1;
  cfg.experiment.block = 4;
  const auto dir = scratch("ablation");
  ExperimentOptions eo;
  eo.write_runs = false;
  const auto r = ablate_redaction(cfg, 1, dir, eo);
  const auto csv = slurp(dir / "ablation.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "task,redaction,metric,value,seed");
  EXPECT_EQ(count_lines(csv), 1 + 9);
  EXPECT_EQ(r.rows.size(), 9u);
  for (const auto& red : ablation_redactions()) EXPECT_EQ(r.mean.at(red).size(), 3u);
  const auto report = slurp(dir / "ablation_report.txt");
  EXPECT_NE(report.find("spectral"), std::string::npos);
  EXPECT_EQ(report, r.report);
}

TEST(Experiments, AblationCellConfigs) {
  const auto base = tiny();
  const auto none = ablation_cell_config(base, TaskKind::depth, "none", 5);
  EXPECT_FALSE(none.crm_enabled);
  EXPECT_EQ(none.loss.gamma, 0.0);
  EXPECT_EQ(none.task, tasks::TaskSet::depth);
  EXPECT_EQ(none.seed, 5u);
  const auto sp = ablation_cell_config(base, TaskKind::normals, "spectral", 5);
  EXPECT_EQ(sp.redaction.domain, RedactionDomain::spectral);
  EXPECT_EQ(sp.crm().mode, crm::Mode::forward);
}

TEST(Experiments, BandSweepWritesCsvAndPlot) {
  auto cfg = tiny();
  cfg.data.train = 8;
  cfg.data.val = 4;
  cfg.optim.epochs = 1;
  const auto dir = scratch("bands");
  ExperimentOptions eo;
  eo.write_runs = false;
  const auto r = band_sweep(cfg, {0.2, 0.5, 0.8}, 1, dir, eo);
  const auto csv = slurp(dir / "band_sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "center,band_lo,band_hi,a_err,seed");
  EXPECT_EQ(count_lines(csv), 1 + 3);
  EXPECT_EQ(r.mean_a_err.size(), 3u);
  EXPECT_EQ(r.argmin_is_middle, is_middle_band(r.argmin_center));
  const auto png = read_png_rgb8(dir / "band_sweep.png");
  EXPECT_EQ(png.width, 640);
  EXPECT_EQ(png.height, 420);
  EXPECT_TRUE(fs::exists(dir / "band_sweep_report.txt"));
  const auto [lo, hi] = band_around(0.05, 0.2);
  EXPECT_EQ(lo, 0.0);
  EXPECT_NEAR(hi, 0.15, 1e-15);
}

TEST(Experiments, SaScalingCsv) {
  auto cfg = tiny();
  cfg.data.train = 8;
  cfg.data.val = 4;
  cfg.optim.epochs = 1;
  cfg.sa.patch = 4;
  cfg.sa.heads = 2;
  const auto dir = scratch("sa_scale");
  ExperimentOptions eo;
  eo.write_runs = false;
  const auto rows = sa_scaling(cfg, {8, 16}, 1, dir, eo);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_LT(rows[0].params, rows[1].params);
  EXPECT_LT(rows[0].macs, rows[1].macs);
  const auto csv = slurp(dir / "sa_scaling.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "dim,params,macs,miou,seed");
  EXPECT_EQ(count_lines(csv), 3);
}

TEST(Experiments, NumberLists) {
  EXPECT_EQ(parse_number_list("0.1, 0.3,0.5"), (std::vector<double>{0.1, 0.3, 0.5}));
  EXPECT_THROW(parse_number_list("0.1,,x"), ConfigError);
}

TEST(SampleConfigs, AllParseAndValidate) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(DEJAVU_CONFIG_DIR)) {
    if (e.path().extension() != ".cfg") continue;
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(load_config(e.path()).validate());
    ++n;
  }
  EXPECT_GE(n, 5);
}
