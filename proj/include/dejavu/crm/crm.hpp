#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dejavu/core/image.hpp"
#include "dejavu/nn/module.hpp"
#include "dejavu/redaction/redaction.hpp"

namespace dejavu::crm {

using ag::Var;

enum class Mode { forward, recursive };
enum class Combine { multiply, concat };

inline std::string_view to_string(Mode m) { return m == Mode::forward ? "forward" : "recursive"; }
inline std::string_view to_string(Combine c) { return c == Combine::multiply ? "multiply" : "concat"; }
inline Mode mode_from_string(std::string_view s) {
  if (s == "forward") return Mode::forward;
  if (s == "recursive") return Mode::recursive;
  throw ConfigError("unknown crm.mode '" + std::string(s) + "'");
}
inline Combine combine_from_string(std::string_view s) {
  if (s == "multiply") return Combine::multiply;
  if (s == "concat") return Combine::concat;
  throw ConfigError("unknown crm.combine '" + std::string(s) + "'");
}

// Random occlusions favour the recursive module, structured or spectral
// redactions the forward one.
inline Mode default_mode_for(const RedactionSpec& spec) {
  return spec.domain == RedactionDomain::spatial && spec.variant == RedactionVariant::random ? Mode::recursive
                                                                                              : Mode::forward;
}

struct CrmConfig {
  Mode mode = Mode::forward;
  Combine combine = Combine::multiply;
  int width = 64;
  int depth = 4;  // stacked blocks, forward mode
  int steps = 4;  // recursion count, recursive mode
  int condition_channels = 1;

  int combined_channels() const { return combine == Combine::multiply ? condition_channels : 3 + condition_channels; }
  void validate() const {
    if (width <= 0) throw ConfigError("crm.width must be positive");
    if (depth <= 0) throw ConfigError("crm.depth must be positive");
    if (steps < 0) throw ConfigError("crm.steps must be non-negative");
    if (condition_channels <= 0) throw ConfigError("condition channel count must be positive");
  }
  friend bool operator==(const CrmConfig&, const CrmConfig&) = default;
};

// multiply: channel-mean of the image times every condition channel (N).
// concat: [image; condition] along channels (3 + N).
template <typename T>
Var<T> combine_inputs(const Var<T>& img_r, const Var<T>& cond, Combine combine) {
  if (img_r.shape().size() != 4 || cond.shape().size() != 4 || img_r.dim(0) != cond.dim(0) ||
      img_r.dim(2) != cond.dim(2) || img_r.dim(3) != cond.dim(3))
    throw DimensionError("combine_inputs: image " + shape_str(img_r.shape()) + " vs condition " +
                         shape_str(cond.shape()));
  if (combine == Combine::multiply) return ag::broadcast_mul(ag::channel_mean(img_r), cond);
  return ag::concat_channels<T>({img_r, cond});
}

template <typename T>
Tensor<T> combine_inputs(const ImageTensor<T>& img_r, const DenseCondition<T>& cond, Combine combine) {
  auto as_batch = [](const Tensor<T>& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return t.reshaped(s);
  };
  auto out = combine_inputs(ag::constant(as_batch(img_r.data)), ag::constant(as_batch(cond.data)), combine);
  Shape s(out.shape().begin() + 1, out.shape().end());
  return out.value().reshaped(s);
}

// Weights of the conditional regenerator. Forward mode owns `depth` stacked
// blocks; recursive mode owns one block reused at every step.
template <typename T>
struct CrmParams {
  std::vector<nn::ConvBnRelu<T>> blocks;
  nn::Conv2d<T> head;  // 1x1 projection to 3 channels

  CrmParams() = default;
  CrmParams(const CrmConfig& cfg, SeededRng& rng) {
    cfg.validate();
    const int cin = cfg.combined_channels();
    if (cfg.mode == Mode::forward) {
      for (int l = 0; l < cfg.depth; ++l) blocks.emplace_back(l == 0 ? cin : cfg.width, cfg.width, 1, rng);
    } else {
      blocks.emplace_back(3 + cin, cfg.width, 1, rng);
    }
    head = nn::Conv2d<T>(cfg.width, 3, 1, 1, 0, rng);
  }

  nn::ParamSet<T> parameters() const {
    nn::ParamSet<T> ps;
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(ps, "crm.block" + std::to_string(l));
    head.collect(ps, "crm.head");
    return ps;
  }

  void zero_head() {
    head.weight.mutable_value().fill(T(0));
    head.bias.mutable_value().fill(T(0));
  }
};

namespace detail {
inline void check_condition(const Shape& cond, const CrmConfig& cfg) {
  if (cond.size() != 4 || cond[1] != cfg.condition_channels)
    throw ConfigError("CRM configured for " + std::to_string(cfg.condition_channels) +
                      " condition channels, got " + shape_str(cond));
}
}  // namespace detail

// L x (conv -> norm -> relu) over the combined input, then the linear head.
template <typename T>
Var<T> crm_forward(const Var<T>& img_r, const Var<T>& cond, const CrmParams<T>& params, const CrmConfig& cfg,
                   bool training) {
  if (cfg.mode != Mode::forward) throw ConfigError("crm_forward called with a recursive config");
  detail::check_condition(cond.shape(), cfg);
  Var<T> h = combine_inputs(img_r, cond, cfg.combine);
  for (const auto& blk : params.blocks) h = blk(h, training);
  return params.head(h);
}

// x0 = I_R; x_{k+1} = x_k + head(block([x_k; combine(I_R, C)])).
template <typename T>
Var<T> crm_recursive(const Var<T>& img_r, const Var<T>& cond, const CrmParams<T>& params, const CrmConfig& cfg,
                     bool training) {
  if (cfg.mode != Mode::recursive) throw ConfigError("crm_recursive called with a forward config");
  detail::check_condition(cond.shape(), cfg);
  const Var<T> combined = combine_inputs(img_r, cond, cfg.combine);
  Var<T> x = img_r;
  for (int k = 0; k < cfg.steps; ++k) {
    Var<T> h = params.blocks.front()(ag::concat_channels<T>({x, combined}), training);
    x = ag::add(x, params.head(h));
  }
  return x;
}

template <typename T>
Var<T> crm_apply(const Var<T>& img_r, const Var<T>& cond, const CrmParams<T>& params, const CrmConfig& cfg,
                 bool training) {
  return cfg.mode == Mode::forward ? crm_forward(img_r, cond, params, cfg, training)
                                   : crm_recursive(img_r, cond, params, cfg, training);
}

}  // namespace dejavu::crm
