#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dejavu/harness/plot.hpp"
#include "dejavu/harness/trainer.hpp"

namespace dejavu::harness {

namespace fs = std::filesystem;

// Headline metric of a single-task run: mIoU for segmentation (higher is
// better), aErr for depth and mErr for normals (lower is better).
inline const char* headline_metric(TaskKind t) {
  switch (t) {
    case TaskKind::segmentation: return "miou";
    case TaskKind::depth: return "a_err";
    case TaskKind::normals: return "m_err_deg";
  }
  return "?";
}

inline bool higher_is_better(TaskKind t) { return t == TaskKind::segmentation; }

inline double headline_value(const tasks::MetricSet& m, TaskKind t) {
  std::optional<double> v;
  switch (t) {
    case TaskKind::segmentation: v = m.miou; break;
    case TaskKind::depth: v = m.a_err; break;
    case TaskKind::normals: v = m.m_err_deg; break;
  }
  if (!v) throw ConfigError("run produced no " + std::string(headline_metric(t)));
  return *v;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct ExperimentOptions {
  bool verbose = false;
  bool write_runs = true;  // keep per-run checkpoints and metric files
};

// ---------------------------------------------------------------------------
// Spatial vs spectral redaction, one single-task run per cell.

struct AblationRow {
  std::string task;
  std::string redaction;
  std::string metric;
  double value = 0;
  std::uint64_t seed = 0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::map<std::string, std::map<std::string, double>> mean;  // redaction -> task -> seed mean
  std::map<std::string, int> wins;                            // redaction -> tasks beating baseline
  std::string report;
};

inline const std::vector<std::string>& ablation_redactions() {
  static const std::vector<std::string> r{"none", "spatial", "spectral"};
  return r;
}

inline TrainConfig ablation_cell_config(const TrainConfig& base, TaskKind task, const std::string& redaction,
                                        std::uint64_t seed) {
  TrainConfig c = base;
  c.task = task == TaskKind::segmentation ? tasks::TaskSet::segmentation
           : task == TaskKind::depth      ? tasks::TaskSet::depth
                                          : tasks::TaskSet::normals;
  c.seed = seed;
  c.sa.enabled = false;
  if (redaction == "none") {
    c.crm_enabled = false;
    c.loss.gamma = 0;
    c.loss.use_text = false;
    c.loss.use_cyclic = false;
  } else if (redaction == "spatial") {
    c.crm_enabled = true;
    c.redaction = RedactionSpec::random_blocks(base.experiment.block);
  } else {
    c.crm_enabled = true;
    c.redaction = RedactionSpec::spectral(RedactionVariant::bandstop, base.experiment.band_lo, base.experiment.band_hi);
  }
  return c;
}

inline std::string ablation_report(const AblationResult& r, int seeds) {
  std::ostringstream os;
  char buf[256];
  os << "Redaction ablation (single-task runs, mean over " << seeds << " seed" << (seeds == 1 ? "" : "s") << ")\n";
  std::snprintf(buf, sizeof buf, "%-10s %12s %12s %12s\n", "redaction", "mIoU (up)", "aErr (down)", "mErr (down)");
  os << buf;
  for (const auto& red : ablation_redactions()) {
    const auto& m = r.mean.at(red);
    std::snprintf(buf, sizeof buf, "%-10s %12.4f %12.4f %12.4f\n", red.c_str(), m.at("segmentation"), m.at("depth"),
                  m.at("normals"));
    os << buf;
  }
  for (const auto& red : {std::string("spatial"), std::string("spectral")})
    os << red << " beats the no-redaction baseline on " << r.wins.at(red) << " of 3 tasks\n";
  os << "\nReference values (NYUD-v2, full-scale published results; mIoU / aErr / mErr):\n"
        "  none     37.25 / 59.70 / 26.30\n"
        "  spatial  38.38 / 58.34 / 26.07\n"
        "  spectral 38.21 / 56.76 / 25.75\n"
        "Only the direction of the differences is comparable at this scale.\n";
  return os.str();
}

inline AblationResult ablate_redaction(const TrainConfig& base, int seeds, const fs::path& out_dir,
                                       ExperimentOptions eo = {}) {
  if (seeds < 1) throw ConfigError("ablate: need at least one seed");
  const auto data = tasks::generate_synthetic_dataset<float>(base.data);
  fs::create_directories(out_dir);
  AblationResult res;
  const std::vector<TaskKind> task_list{TaskKind::segmentation, TaskKind::depth, TaskKind::normals};
  std::map<std::string, std::map<std::string, std::vector<double>>> vals;
  for (TaskKind task : task_list)
    for (const auto& red : ablation_redactions())
      for (int s = 0; s < seeds; ++s) {
        const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(s);
        TrainConfig c = ablation_cell_config(base, task, red, seed);
        c.out = (out_dir / "runs" / std::string(to_string(task)) / red / ("seed" + std::to_string(seed))).string();
        TrainOptions to;
        to.write_files = eo.write_runs;
        auto rec = train<float>(c, data, to);
        const double v = headline_value(rec.final_metrics.at(task), task);
        res.rows.push_back({std::string(to_string(task)), red, headline_metric(task), v, seed});
        vals[red][std::string(to_string(task))].push_back(v);
        if (eo.verbose)
          std::cerr << "ablate " << to_string(task) << " " << red << " seed " << seed << ": " << headline_metric(task)
                    << " = " << v << " (" << rec.wall_seconds << " s)\n";
      }
  for (const auto& [red, per_task] : vals)
    for (const auto& [task, v] : per_task) res.mean[red][task] = mean_of(v);
  for (const auto& red : {std::string("spatial"), std::string("spectral")}) {
    int w = 0;
    for (TaskKind t : task_list) {
      const std::string tn(to_string(t));
      const double a = res.mean[red][tn], b = res.mean["none"][tn];
      w += higher_is_better(t) ? a > b : a < b;
    }
    res.wins[red] = w;
  }
  {
    std::ofstream os(out_dir / "ablation.csv");
    os << "task,redaction,metric,value,seed\n";
    for (const auto& r : res.rows)
      os << r.task << ',' << r.redaction << ',' << r.metric << ',' << format_value(r.value) << ',' << r.seed << '\n';
  }
  res.report = ablation_report(res, seeds);
  std::ofstream(out_dir / "ablation_report.txt") << res.report;
  return res;
}

// ---------------------------------------------------------------------------
// Bandstop frequency sweep on depth.

struct BandSweepRow {
  double center = 0, band_lo = 0, band_hi = 0, a_err = 0;
  std::uint64_t seed = 0;
};

struct BandSweepResult {
  std::vector<BandSweepRow> rows;
  std::vector<double> centers;
  std::vector<double> mean_a_err;  // per center
  double argmin_center = 0;
  bool argmin_is_middle = false;
  std::string report;
};

inline std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(detail::parse_double("list", item));
  }
  if (out.empty()) throw ConfigError("empty number list '" + s + "'");
  return out;
}

inline std::pair<double, double> band_around(double center, double width) {
  const double lo = std::max(0.0, center - width / 2), hi = std::min(1.0, center + width / 2);
  if (!(lo < hi)) throw ConfigError("band around " + short_number(center) + " is empty");
  return {lo, hi};
}

// Middle band: centers in [0.3, 0.7] of the normalized radial range.
inline bool is_middle_band(double c) { return c >= 0.3 - 1e-9 && c <= 0.7 + 1e-9; }

inline BandSweepResult band_sweep(const TrainConfig& base, const std::vector<double>& centers, int seeds,
                                  const fs::path& out_dir, ExperimentOptions eo = {}) {
  if (centers.empty()) throw ConfigError("sweep-bands: no centers");
  if (seeds < 1) throw ConfigError("sweep-bands: need at least one seed");
  const auto data = tasks::generate_synthetic_dataset<float>(base.data);
  fs::create_directories(out_dir);
  BandSweepResult res;
  res.centers = centers;
  for (double c : centers) {
    const auto [lo, hi] = band_around(c, base.experiment.band_width);
    std::vector<double> vals;
    for (int s = 0; s < seeds; ++s) {
      TrainConfig cfg = base;
      cfg.task = tasks::TaskSet::depth;
      cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      cfg.sa.enabled = false;
      cfg.crm_enabled = true;
      cfg.redaction = RedactionSpec::spectral(RedactionVariant::bandstop, lo, hi);
      cfg.out = (out_dir / "runs" / ("center" + short_number(c)) / ("seed" + std::to_string(cfg.seed))).string();
      TrainOptions to;
      to.write_files = eo.write_runs;
      auto rec = train<float>(cfg, data, to);
      const double v = headline_value(rec.final_metrics.at(TaskKind::depth), TaskKind::depth);
      res.rows.push_back({c, lo, hi, v, cfg.seed});
      vals.push_back(v);
      if (eo.verbose)
        std::cerr << "sweep center " << c << " [" << lo << ", " << hi << "] seed " << cfg.seed << ": a_err = " << v
                  << " (" << rec.wall_seconds << " s)\n";
    }
    res.mean_a_err.push_back(mean_of(vals));
  }
  const auto best = std::min_element(res.mean_a_err.begin(), res.mean_a_err.end()) - res.mean_a_err.begin();
  res.argmin_center = centers[static_cast<std::size_t>(best)];
  res.argmin_is_middle = is_middle_band(res.argmin_center);
  {
    std::ofstream os(out_dir / "band_sweep.csv");
    os << "center,band_lo,band_hi,a_err,seed\n";
    for (const auto& r : res.rows)
      os << format_value(r.center) << ',' << format_value(r.band_lo) << ',' << format_value(r.band_hi) << ','
         << format_value(r.a_err) << ',' << r.seed << '\n';
  }
  std::ostringstream rep;
  rep << "Bandstop sweep on depth (band width " << base.experiment.band_width << ", " << seeds << " seed"
      << (seeds == 1 ? "" : "s") << ")\n";
  for (std::size_t i = 0; i < centers.size(); ++i) rep << "  center " << centers[i] << ": aErr " << res.mean_a_err[i] << '\n';
  rep << "lowest error at center " << res.argmin_center << " ("
      << (res.argmin_is_middle ? "a middle band" : "not a middle band") << ")\n";
  rep << "reference expectation: error is lowest when a middle band is removed; "
      << (res.argmin_is_middle ? "this sweep agrees" : "this sweep does not agree") << '\n';
  res.report = rep.str();
  std::ofstream(out_dir / "band_sweep_report.txt") << res.report;
  LinePlotOptions po;
  po.title = "DEPTH AERR VS REMOVED BAND";
  po.x_label = "BAND CENTER (NORMALIZED RADIAL FREQUENCY)";
  po.y_label = "AERR";
  po.notes = {"REFERENCE: LOWEST ERROR EXPECTED AT A MIDDLE BAND",
              "OBSERVED ARGMIN: " + short_number(res.argmin_center)};
  po.marker_x = res.argmin_center;
  line_plot(out_dir / "band_sweep.png", Series{centers, res.mean_a_err}, po);
  return res;
}

// ---------------------------------------------------------------------------
// Shared-attention width scaling.

struct SaScalingRow {
  int dim = 0;
  std::size_t params = 0;  // SA module parameters
  std::uint64_t macs = 0;  // SA enhancement pass, per image
  double miou = 0;
  std::uint64_t seed = 0;
};

inline std::size_t sa_parameter_count(const TrainConfig& cfg) {
  SeededRng rng(0);
  return sa::SaParams<float>(cfg.sa, cfg.basenet().layout().channels(), rng).parameters().count();
}

inline std::vector<SaScalingRow> sa_scaling(const TrainConfig& base, const std::vector<int>& dims, int seeds,
                                            const fs::path& out_dir, ExperimentOptions eo = {}) {
  if (dims.empty()) throw ConfigError("sa-scale: no dims");
  const auto data = tasks::generate_synthetic_dataset<float>(base.data);
  fs::create_directories(out_dir);
  std::vector<SaScalingRow> rows;
  for (int d : dims)
    for (int s = 0; s < seeds; ++s) {
      TrainConfig cfg = base;
      cfg.task = tasks::TaskSet::segmentation;
      cfg.sa.enabled = true;
      cfg.sa.dim = d;
      cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      cfg.out = (out_dir / "runs" / ("dim" + std::to_string(d)) / ("seed" + std::to_string(cfg.seed))).string();
      cfg.validate();
      TrainOptions to;
      to.write_files = eo.write_runs;
      auto rec = train<float>(cfg, data, to);
      SaScalingRow r;
      r.dim = d;
      r.params = sa_parameter_count(cfg);
      r.macs = sa::sa_inference_macs(cfg.sa, cfg.data.height, cfg.data.width, cfg.basenet().layout().channels());
      r.miou = headline_value(rec.final_metrics.at(TaskKind::segmentation), TaskKind::segmentation);
      r.seed = cfg.seed;
      rows.push_back(r);
      if (eo.verbose)
        std::cerr << "sa-scale dim " << d << " seed " << cfg.seed << ": params " << r.params << ", macs " << r.macs
                  << ", miou " << r.miou << '\n';
    }
  std::ofstream os(out_dir / "sa_scaling.csv");
  os << "dim,params,macs,miou,seed\n";
  for (const auto& r : rows)
    os << r.dim << ',' << r.params << ',' << r.macs << ',' << format_value(r.miou) << ',' << r.seed << '\n';
  return rows;
}

}  // namespace dejavu::harness
