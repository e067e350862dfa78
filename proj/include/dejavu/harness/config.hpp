#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>

#include "dejavu/crm/crm.hpp"
#include "dejavu/losses/losses.hpp"
#include "dejavu/redaction/redaction.hpp"
#include "dejavu/sa/shared_attention.hpp"
#include "dejavu/tasks/basenet.hpp"
#include "dejavu/tasks/synthetic.hpp"

namespace dejavu::harness {

struct OptimConfig {
  double lr = 1e-3;
  int epochs = 30;
  int batch = 8;
  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

// Knobs used only by the experiment drivers.
struct ExperimentConfig {
  std::string id = "default";
  int block = 8;           // random_blocks block size in the redaction ablation
  double band_lo = 0.2;    // bandstop band in the redaction ablation
  double band_hi = 0.5;
  double band_width = 0.2;  // band width of the frequency sweep
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct TrainConfig {
  tasks::TaskSet task = tasks::TaskSet::segmentation;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  tasks::SyntheticSceneSpec data;
  int basenet_width = 32;
  int basenet_levels = 3;
  RedactionSpec redaction = RedactionSpec::random_blocks(8);
  bool crm_enabled = true;
  std::optional<crm::Mode> crm_mode;  // empty: chosen from the redaction
  crm::Combine crm_combine = crm::Combine::concat;
  int crm_width = 64;
  int crm_depth = 4;
  int crm_steps = 4;
  losses::LossWeights loss;
  sa::SaConfig sa;
  OptimConfig optim;
  ExperimentConfig experiment;

  tasks::BaseNetConfig basenet() const {
    return {task, data.shape_classes, basenet_width, basenet_levels};
  }
  crm::CrmConfig crm() const {
    crm::CrmConfig c;
    c.mode = crm_mode.value_or(crm::default_mode_for(redaction));
    c.combine = crm_combine;
    c.width = crm_width;
    c.depth = crm_depth;
    c.steps = crm_steps;
    c.condition_channels = basenet().layout().channels();
    return c;
  }

  void validate() const {
    data.validate();
    basenet().validate();
    redaction.validate_for(data.height, data.width);
    crm().validate();
    loss.validate();
    if (sa.enabled) sa.validate_for(data.height, data.width);
    if (optim.lr <= 0) throw ConfigError("optim.lr must be positive");
    if (optim.epochs < 0) throw ConfigError("optim.epochs must be non-negative");
    if (optim.batch <= 0) throw ConfigError("optim.batch must be positive");
    const int div = 1 << (basenet_levels - 1);
    if (data.height % div || data.width % div)
      throw ConfigError("data.size must be divisible by 2^(basenet.levels-1)");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

// Collects the redaction keys of one prefix and assembles the spec once all
// lines have been read, so that key order in the file does not matter.
struct RedactionKeys {
  std::optional<std::string> domain, variant;
  std::optional<double> t, band_lo, band_hi;
  std::optional<int> b;

  bool any() const { return domain || variant || t || band_lo || band_hi || b; }
  RedactionSpec build(const std::string& prefix) const {
    if (!domain || !variant) throw ConfigError(prefix + ".domain and " + prefix + ".variant are both required");
    RedactionSpec s;
    s.domain = redaction_domain_from_string(*domain);
    s.variant = redaction_variant_from_string(*variant);
    s.t = t;
    s.b = b;
    s.band_lo = band_lo;
    s.band_hi = band_hi;
    try {
      s.validate();
    } catch (const InvalidSpecError& e) {
      throw ConfigError(prefix + ": " + e.what());
    }
    return s;
  }
};

inline void emit_redaction(std::ostringstream& os, const std::string& prefix, const RedactionSpec& s) {
  os << prefix << ".domain = " << to_string(s.domain) << '\n';
  os << prefix << ".variant = " << to_string(s.variant) << '\n';
  if (s.t) os << prefix << ".t = " << fmt_double(*s.t) << '\n';
  if (s.b) os << prefix << ".b = " << *s.b << '\n';
  if (s.band_lo) os << prefix << ".band_lo = " << fmt_double(*s.band_lo) << '\n';
  if (s.band_hi) os << prefix << ".band_hi = " << fmt_double(*s.band_hi) << '\n';
}

inline bool take_redaction_key(RedactionKeys& r, const std::string& field, const std::string& key,
                               const std::string& v) {
  if (field == "domain") r.domain = v;
  else if (field == "variant") r.variant = v;
  else if (field == "t") r.t = parse_double(key, v);
  else if (field == "b") r.b = parse_int<int>(key, v);
  else if (field == "band_lo") r.band_lo = parse_double(key, v);
  else if (field == "band_hi") r.band_hi = parse_double(key, v);
  else return false;
  return true;
}

}  // namespace detail

// Flat `key = value` text, one key per line, `#` starts a comment.
inline std::string serialize_config(const TrainConfig& c) {
  using detail::bool_str;
  using detail::fmt_double;
  std::ostringstream os;
  os << "task = " << tasks::to_string(c.task) << '\n';
  os << "seed = " << c.seed << '\n';
  os << "out = " << c.out << '\n';
  os << "data.height = " << c.data.height << '\n';
  os << "data.width = " << c.data.width << '\n';
  os << "data.num_shapes = " << c.data.num_shapes << '\n';
  os << "data.classes = " << c.data.shape_classes << '\n';
  os << "data.seed = " << c.data.seed << '\n';
  os << "data.train = " << c.data.train << '\n';
  os << "data.val = " << c.data.val << '\n';
  os << "basenet.width = " << c.basenet_width << '\n';
  os << "basenet.levels = " << c.basenet_levels << '\n';
  detail::emit_redaction(os, "redaction", c.redaction);
  os << "crm.enabled = " << bool_str(c.crm_enabled) << '\n';
  os << "crm.mode = " << (c.crm_mode ? std::string(crm::to_string(*c.crm_mode)) : "auto") << '\n';
  os << "crm.combine = " << crm::to_string(c.crm_combine) << '\n';
  os << "crm.width = " << c.crm_width << '\n';
  os << "crm.depth = " << c.crm_depth << '\n';
  os << "crm.steps = " << c.crm_steps << '\n';
  os << "loss.gamma = " << fmt_double(c.loss.gamma) << '\n';
  os << "loss.gamma1 = " << fmt_double(c.loss.gamma1) << '\n';
  os << "loss.gamma2 = " << fmt_double(c.loss.gamma2) << '\n';
  os << "loss.gamma_text = " << fmt_double(c.loss.gamma_text) << '\n';
  os << "loss.gamma_cyc = " << fmt_double(c.loss.gamma_cyc) << '\n';
  os << "loss.use_text = " << bool_str(c.loss.use_text) << '\n';
  os << "loss.use_cyclic = " << bool_str(c.loss.use_cyclic) << '\n';
  os << "sa.enabled = " << bool_str(c.sa.enabled) << '\n';
  os << "sa.patch = " << c.sa.patch << '\n';
  os << "sa.dim = " << c.sa.dim << '\n';
  os << "sa.heads = " << c.sa.heads << '\n';
  detail::emit_redaction(os, "sa.redaction", c.sa.spectral_spec);
  os << "optim.lr = " << fmt_double(c.optim.lr) << '\n';
  os << "optim.epochs = " << c.optim.epochs << '\n';
  os << "optim.batch = " << c.optim.batch << '\n';
  os << "experiment.id = " << c.experiment.id << '\n';
  os << "experiment.block = " << c.experiment.block << '\n';
  os << "experiment.band_lo = " << fmt_double(c.experiment.band_lo) << '\n';
  os << "experiment.band_hi = " << fmt_double(c.experiment.band_hi) << '\n';
  os << "experiment.band_width = " << fmt_double(c.experiment.band_width) << '\n';
  return os.str();
}

// Keys that are absent keep their defaults. Unknown or repeated keys are
// errors.
inline TrainConfig parse_config(const std::string& text) {
  using namespace detail;
  TrainConfig c;
  RedactionKeys red, sa_red;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'");

    if (key == "task") c.task = tasks::task_set_from_string(v);
    else if (key == "seed") c.seed = parse_int<std::uint64_t>(key, v);
    else if (key == "out") c.out = v;
    else if (key == "data.height") c.data.height = parse_int<int>(key, v);
    else if (key == "data.width") c.data.width = parse_int<int>(key, v);
    else if (key == "data.size") c.data.height = c.data.width = parse_int<int>(key, v);
    else if (key == "data.num_shapes") c.data.num_shapes = parse_int<int>(key, v);
    else if (key == "data.classes") c.data.shape_classes = parse_int<int>(key, v);
    else if (key == "data.seed") c.data.seed = parse_int<std::uint64_t>(key, v);
    else if (key == "data.train") c.data.train = parse_int<int>(key, v);
    else if (key == "data.val") c.data.val = parse_int<int>(key, v);
    else if (key == "basenet.width") c.basenet_width = parse_int<int>(key, v);
    else if (key == "basenet.levels") c.basenet_levels = parse_int<int>(key, v);
    else if (key.starts_with("redaction.") && take_redaction_key(red, key.substr(10), key, v)) {
    } else if (key == "crm.enabled") c.crm_enabled = parse_bool(key, v);
    else if (key == "crm.mode") {
      if (v == "auto") c.crm_mode.reset();
      else c.crm_mode = crm::mode_from_string(v);
    } else if (key == "crm.combine") c.crm_combine = crm::combine_from_string(v);
    else if (key == "crm.width") c.crm_width = parse_int<int>(key, v);
    else if (key == "crm.depth") c.crm_depth = parse_int<int>(key, v);
    else if (key == "crm.steps") c.crm_steps = parse_int<int>(key, v);
    else if (key == "loss.gamma") c.loss.gamma = parse_double(key, v);
    else if (key == "loss.gamma1") c.loss.gamma1 = parse_double(key, v);
    else if (key == "loss.gamma2") c.loss.gamma2 = parse_double(key, v);
    else if (key == "loss.gamma_text") c.loss.gamma_text = parse_double(key, v);
    else if (key == "loss.gamma_cyc") c.loss.gamma_cyc = parse_double(key, v);
    else if (key == "loss.use_text") c.loss.use_text = parse_bool(key, v);
    else if (key == "loss.use_cyclic") c.loss.use_cyclic = parse_bool(key, v);
    else if (key == "sa.enabled") c.sa.enabled = parse_bool(key, v);
    else if (key == "sa.patch") c.sa.patch = parse_int<int>(key, v);
    else if (key == "sa.dim") c.sa.dim = parse_int<int>(key, v);
    else if (key == "sa.heads") c.sa.heads = parse_int<int>(key, v);
    else if (key.starts_with("sa.redaction.") && take_redaction_key(sa_red, key.substr(13), key, v)) {
    } else if (key == "optim.lr") c.optim.lr = parse_double(key, v);
    else if (key == "optim.epochs") c.optim.epochs = parse_int<int>(key, v);
    else if (key == "optim.batch") c.optim.batch = parse_int<int>(key, v);
    else if (key == "experiment.id") c.experiment.id = v;
    else if (key == "experiment.block") c.experiment.block = parse_int<int>(key, v);
    else if (key == "experiment.band_lo") c.experiment.band_lo = parse_double(key, v);
    else if (key == "experiment.band_hi") c.experiment.band_hi = parse_double(key, v);
    else if (key == "experiment.band_width") c.experiment.band_width = parse_double(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (red.any()) c.redaction = red.build("redaction");
  if (sa_red.any()) c.sa.spectral_spec = sa_red.build("sa.redaction");
  return c;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const TrainConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << serialize_config(c);
}

}  // namespace dejavu::harness
