#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dejavu/harness/checkpoint.hpp"
#include "dejavu/tasks/dataset_io.hpp"

namespace dejavu::harness {

namespace fs = std::filesystem;

using Dataset = tasks::SyntheticDataset<float>;

struct MetricRow {
  int epoch = 0;
  std::string split;
  std::string task;
  std::string metric;
  double value = 0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct RunRecord {
  TrainConfig config;
  std::vector<MetricRow> history;
  std::vector<double> step_losses;  // total loss of every step run in this process
  std::map<TaskKind, tasks::MetricSet> final_metrics;
  std::string checkpoint;
  double wall_seconds = 0;
};

struct TrainOptions {
  int stop_after_epochs = -1;  // simulate an interruption after this many epochs
  bool resume = false;
  bool force_regen_graph = false;
  bool write_files = true;
  bool verbose = false;
  bool freeze_basenet = false;  // only CRM/SA parameters are updated
};

inline std::string csv_header() { return "epoch,split,task,metric,value"; }

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_line(const MetricRow& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + r.task + "," + r.metric + "," + format_value(r.value);
}

inline std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  std::vector<MetricRow> rows;
  std::ifstream is(path);
  if (!is) return rows;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string f;
    std::getline(ss, f, ',');
    r.epoch = std::stoi(f);
    std::getline(ss, r.split, ',');
    std::getline(ss, r.task, ',');
    std::getline(ss, r.metric, ',');
    std::getline(ss, f, ',');
    r.value = std::stod(f);
    rows.push_back(r);
  }
  return rows;
}

inline void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << csv_header() << '\n';
    for (const auto& r : rows) os << csv_line(r) << '\n';
  }
  fs::rename(tmp, path);
}

// Metric rows for one task, in a fixed order.
inline void append_metric_rows(std::vector<MetricRow>& out, int epoch, const std::string& split, TaskKind task,
                               const tasks::MetricSet& m) {
  const std::string t(to_string(task));
  auto add = [&](const char* name, const std::optional<double>& v) {
    if (v) out.push_back({epoch, split, t, name, *v});
  };
  add("miou", m.miou);
  add("a_err", m.a_err);
  add("abs_rel", m.abs_rel);
  add("sq_rel", m.sq_rel);
  add("delta1", m.delta1);
  add("m_err_deg", m.m_err_deg);
}

template <typename T>
struct Batch {
  Tensor<T> images;  // N x 3 x H x W
  tasks::GroundTruthBatch<T> gt;
  std::vector<const tasks::GroundTruth<T>*> items;
  std::vector<std::uint64_t> seeds;
};

template <typename T>
Batch<T> make_batch(const std::vector<tasks::Sample<T>>& samples, const std::vector<int>& idx) {
  Batch<T> b;
  std::vector<Tensor<T>> imgs;
  for (int i : idx) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    imgs.push_back(s.image.data);
    b.items.push_back(&s.gt);
    b.seeds.push_back(s.seed);
  }
  b.images = stack<T>(imgs);
  b.gt = tasks::stack_ground_truth<T>(b.items);
  return b;
}

// Evaluation-mode metrics of the final predictions over one split.
template <typename T>
std::map<TaskKind, tasks::MetricSet> evaluate(const Model<T>& model, const TrainConfig& cfg,
                                              const std::vector<tasks::Sample<T>>& samples, int batch = 16) {
  const auto layout = model.basenet.layout();
  tasks::MetricAccumulator acc(cfg.data.shape_classes);
  const int n = static_cast<int>(samples.size());
  for (int s = 0; s < n; s += batch) {
    std::vector<int> idx;
    for (int i = s; i < std::min(n, s + batch); ++i) idx.push_back(i);
    auto b = make_batch(samples, idx);
    auto pred = model.predict(ag::constant(b.images), cfg, false);
    tasks::accumulate_batch(acc, pred.value(), layout, b.items);
  }
  const auto all = acc.result();
  std::map<TaskKind, tasks::MetricSet> out;
  for (const auto& slot : layout.slots) {
    tasks::MetricSet m;
    switch (slot.task) {
      case TaskKind::segmentation: m.miou = all.miou; break;
      case TaskKind::depth:
        m.a_err = all.a_err;
        m.abs_rel = all.abs_rel;
        m.sq_rel = all.sq_rel;
        m.delta1 = all.delta1;
        break;
      case TaskKind::normals: m.m_err_deg = all.m_err_deg; break;
    }
    out[slot.task] = m;
  }
  return out;
}

inline int steps_per_epoch(const TrainConfig& cfg) {
  return (cfg.data.train + cfg.optim.batch - 1) / cfg.optim.batch;
}

// Full training state of one run.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const tasks::SyntheticDataset<T>& data, TrainOptions opts = {})
      : cfg_(std::move(cfg)), data_(data), opts_(opts), model_(cfg_) {
    cfg_.validate();
    nn::AdamOptions ao;
    ao.lr = cfg_.optim.lr;
    ao.total_steps = static_cast<long>(cfg_.optim.epochs) * steps_per_epoch(cfg_);
    nn::ParamSet<T> ps = model_.trainable();
    if (opts_.freeze_basenet) {
      nn::ParamSet<T> rest;
      for (const auto& p : ps.params())
        if (!p.name.starts_with("basenet.")) rest.add(p.name, p.var);
      model_.basenet.parameters().set_requires_grad(false);
      ps = rest;
    }
    opt_ = nn::Adam<T>(ps, ao);
  }

  const TrainConfig& config() const { return cfg_; }
  Model<T>& model() { return model_; }
  const Model<T>& model() const { return model_; }
  nn::Adam<T>& optimizer() { return opt_; }
  long global_step() const { return opt_.steps_taken(); }

  SeededRng redaction_stream(long step) const {
    return SeededRng(cfg_.seed).substream("redaction").derive(static_cast<std::uint64_t>(step));
  }

  // One optimizer step on the given sample indices. Returns the losses.
  StepLosses<T> step(const std::vector<int>& idx) {
    auto b = make_batch(data_.train, idx);
    const long s = opt_.steps_taken();
    StepLosses<T> l;
    try {
      l = compute_losses(model_, cfg_, ag::constant(b.images), b.gt, redaction_stream(s), opts_.force_regen_graph);
    } catch (const NonFiniteLossError& e) {
      std::ostringstream msg;
      msg << e.what() << " at step " << s << "; batch scene seeds:";
      for (auto sd : b.seeds) msg << ' ' << sd;
      throw NonFiniteLossError(msg.str());
    }
    opt_.zero_grad();
    ag::backward(l.total);
    opt_.step();
    return l;
  }

  std::vector<int> epoch_order(int epoch) const {
    SeededRng r = SeededRng(cfg_.seed).substream("data").derive(static_cast<std::uint64_t>(epoch));
    return r.permutation(static_cast<int>(data_.train.size()));
  }

  RunRecord run() {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config = cfg_;
    const fs::path out(cfg_.out);
    const fs::path ckpt = out / "checkpoint.bin", csv = out / "metrics.csv";
    int start_epoch = 0;
    if (opts_.write_files) {
      fs::create_directories(out);
      save_config(cfg_, out / "config.txt");
    }
    if (opts_.resume && fs::exists(ckpt)) {
      const auto info = load_checkpoint(ckpt, opt_);
      if (parse_config(info.config_text) != cfg_) throw ConfigError("checkpoint was written by a different config");
      start_epoch = info.epoch;
      // Rows past the checkpoint belong to an epoch that will be re-run.
      for (const auto& r : read_metrics_csv(csv))
        if (r.epoch <= start_epoch) rec.history.push_back(r);
    }
    const int B = cfg_.optim.batch;
    const int n = static_cast<int>(data_.train.size());
    int epoch = start_epoch;
    for (; epoch < cfg_.optim.epochs; ++epoch) {
      if (opts_.stop_after_epochs >= 0 && epoch >= opts_.stop_after_epochs) break;
      const auto order = epoch_order(epoch);
      double loss_sum = 0, base_sum = 0;
      int steps = 0;
      for (int s = 0; s < n; s += B) {
        std::vector<int> idx(order.begin() + s, order.begin() + std::min(n, s + B));
        auto l = step(idx);
        const double tl = l.total.item();
        rec.step_losses.push_back(tl);
        loss_sum += tl;
        base_sum += l.base.item();
        ++steps;
      }
      std::vector<MetricRow> rows;
      const std::string task(tasks::to_string(cfg_.task));
      rows.push_back({epoch + 1, "train", task, "loss", steps ? loss_sum / steps : 0.0});
      rows.push_back({epoch + 1, "train", task, "base_loss", steps ? base_sum / steps : 0.0});
      for (const auto& [k, m] : evaluate(model_, cfg_, data_.val)) append_metric_rows(rows, epoch + 1, "val", k, m);
      rec.history.insert(rec.history.end(), rows.begin(), rows.end());
      if (opts_.verbose) {
        std::cerr << "epoch " << epoch + 1 << "/" << cfg_.optim.epochs;
        for (const auto& r : rows) std::cerr << "  " << r.split << "." << r.metric << "=" << r.value;
        std::cerr << '\n';
      }
      if (opts_.write_files) {
        write_metrics_csv(csv, rec.history);
        save_checkpoint(ckpt, cfg_, epoch + 1, opt_);
      }
    }
    rec.final_metrics = evaluate(model_, cfg_, data_.val);
    if (opts_.write_files) rec.checkpoint = ckpt.string();
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

 private:
  TrainConfig cfg_;
  const tasks::SyntheticDataset<T>& data_;
  TrainOptions opts_;
  Model<T> model_;
  nn::Adam<T> opt_;
};

template <typename T = float>
RunRecord train(const TrainConfig& cfg, const tasks::SyntheticDataset<T>& data, TrainOptions opts = {}) {
  Trainer<T> t(cfg, data, opts);
  return t.run();
}

inline RunRecord train(const TrainConfig& cfg, TrainOptions opts = {}) {
  const auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
  return train<float>(cfg, data, opts);
}

// Loads a checkpoint into a freshly built model.
template <typename T = float>
std::pair<TrainConfig, Model<T>> load_model(const fs::path& ckpt) {
  const auto info = read_checkpoint_info(ckpt);
  TrainConfig cfg = parse_config(info.config_text);
  Model<T> m(cfg);
  nn::Adam<T> opt(m.trainable(), {});
  load_checkpoint(ckpt, opt);
  return {cfg, std::move(m)};
}

}  // namespace dejavu::harness
