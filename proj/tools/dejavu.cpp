#include <CLI11.hpp>

#include <iostream>

#include "dejavu/dejavu.hpp"

using namespace dejavu;
using namespace dejavu::harness;

namespace {

void print_metrics(const std::map<TaskKind, tasks::MetricSet>& ms) {
  for (const auto& [task, m] : ms) {
    std::vector<MetricRow> rows;
    append_metric_rows(rows, 0, "", task, m);
    for (const auto& r : rows) std::cout << r.task << ' ' << r.metric << ' ' << format_value(r.value) << '\n';
  }
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_number_list(s)) {
    if (v != static_cast<int>(v)) throw ConfigError("expected integers in '" + s + "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional regeneration training for dense prediction"};
  app.require_subcommand(1);

  std::string config, out, ckpt, split = "val", in, domain, variant, centers, dims;
  std::uint64_t seed = 0;
  int seeds = 3;
  bool resume = false, verbose = false;
  double t = 0;
  int b = 0;
  std::vector<double> band;

  auto* train_cmd = app.add_subcommand("train", "train one run");
  train_cmd->add_option("--config", config, "config file")->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed, "run seed (overrides the config)");
  auto* out_opt = train_cmd->add_option("--out", out, "output directory (overrides the config)");
  train_cmd->add_flag("--resume", resume, "continue from the checkpoint in the output directory");
  train_cmd->add_flag("-v,--verbose", verbose, "print per-epoch metrics");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

  auto* redact_cmd = app.add_subcommand("redact", "redact an image file");
  redact_cmd->add_option("--in", in, "input PNG")->required();
  redact_cmd->add_option("--out", out, "output PNG")->required();
  redact_cmd->add_option("--domain", domain, "spatial or spectral")->required();
  redact_cmd->add_option("--variant", variant, "redaction variant")->required();
  auto* t_opt = redact_cmd->add_option("--t", t, "drop probability (spatial random)");
  auto* b_opt = redact_cmd->add_option("--b", b, "block size (checkerboard, random_blocks)");
  auto* band_opt = redact_cmd->add_option("--band", band, "normalized band LO HI (spectral)")->expected(2);
  auto* rseed_opt = redact_cmd->add_option("--seed", seed, "redaction seed");

  auto* ablate_cmd = app.add_subcommand("ablate", "spatial vs spectral redaction over three tasks");
  ablate_cmd->add_option("--config", config, "base config")->required();
  ablate_cmd->add_option("--seeds", seeds, "seeds per cell");
  auto* ablate_out = ablate_cmd->add_option("--out", out, "output directory (default: config out)");
  ablate_cmd->add_flag("-v,--verbose", verbose);

  auto* sweep_cmd = app.add_subcommand("sweep-bands", "bandstop frequency sweep on depth");
  sweep_cmd->add_option("--config", config, "base config")->required();
  sweep_cmd->add_option("--centers", centers, "comma-separated band centers")->required();
  sweep_cmd->add_option("--seeds", seeds, "seeds per center")->default_val(1);
  auto* sweep_out = sweep_cmd->add_option("--out", out, "output directory (default: config out)");
  sweep_cmd->add_flag("-v,--verbose", verbose);

  auto* sa_cmd = app.add_subcommand("sa-scale", "shared-attention width scaling");
  sa_cmd->add_option("--config", config, "base config")->required();
  sa_cmd->add_option("--dims", dims, "comma-separated embedding dims")->required();
  sa_cmd->add_option("--seeds", seeds, "seeds per dim")->default_val(1);
  auto* sa_out = sa_cmd->add_option("--out", out, "output directory (default: config out)");
  sa_cmd->add_flag("-v,--verbose", verbose);

  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic dataset of a config to disk");
  gen_cmd->add_option("--config", config, "config file")->required();
  gen_cmd->add_option("--out", out, "dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentOptions eo;
    if (*train_cmd) {
      TrainConfig cfg = load_config(config);
      if (*seed_opt) cfg.seed = seed;
      if (*out_opt) cfg.out = out;
      TrainOptions to;
      to.resume = resume;
      to.verbose = verbose;
      auto rec = train(cfg, to);
      print_metrics(rec.final_metrics);
      std::cout << "checkpoint " << rec.checkpoint << '\n';
    } else if (*eval_cmd) {
      auto [cfg, model] = load_model<float>(ckpt);
      const auto data = tasks::generate_synthetic_dataset<float>(cfg.data);
      print_metrics(evaluate(model, cfg, split == "train" ? data.train : data.val));
    } else if (*redact_cmd) {
      RedactionSpec spec;
      spec.domain = redaction_domain_from_string(domain);
      spec.variant = redaction_variant_from_string(variant);
      if (*t_opt) spec.t = t;
      if (*b_opt) spec.b = b;
      if (*band_opt) {
        spec.band_lo = band.at(0);
        spec.band_hi = band.at(1);
      }
      spec.seed = *rseed_opt ? seed : 0;
      auto img = load_image<double>(in);
      SeededRng rng(spec.seed);
      save_image(redact(img, spec, rng), out);
    } else if (*ablate_cmd) {
      TrainConfig cfg = load_config(config);
      eo.verbose = verbose;
      auto res = ablate_redaction(cfg, seeds, *ablate_out ? out : cfg.out, eo);
      std::cout << res.report;
    } else if (*sweep_cmd) {
      TrainConfig cfg = load_config(config);
      eo.verbose = verbose;
      auto res = band_sweep(cfg, parse_number_list(centers), seeds, *sweep_out ? out : cfg.out, eo);
      std::cout << res.report;
    } else if (*sa_cmd) {
      TrainConfig cfg = load_config(config);
      eo.verbose = verbose;
      const std::string dir = *sa_out ? out : cfg.out;
      auto rows = sa_scaling(cfg, parse_int_list(dims), seeds, dir, eo);
      std::cout << "dim,params,macs,miou,seed\n";
      for (const auto& r : rows)
        std::cout << r.dim << ',' << r.params << ',' << r.macs << ',' << format_value(r.miou) << ',' << r.seed << '\n';
    } else if (*gen_cmd) {
      TrainConfig cfg = load_config(config);
      tasks::write_dataset(out, cfg.data, tasks::generate_synthetic_dataset<float>(cfg.data));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
