#pragma once

#include <algorithm>
#include <cstdint>

#include "dejavu/nn/module.hpp"
#include "dejavu/redaction/redaction.hpp"
#include "dejavu/tasks/basenet.hpp"

namespace dejavu::sa {

using ag::Var;

struct SaConfig {
  bool enabled = false;
  int patch = 4;
  int dim = 64;
  int heads = 4;
  RedactionSpec spectral_spec = RedactionSpec::spectral(RedactionVariant::bandstop, 0.2, 0.5);

  int decoder_hidden() const { return std::max(8, dim / 2); }
  void validate() const {
    if (patch <= 0) throw ConfigError("sa.patch must be positive");
    if (dim <= 0) throw ConfigError("sa.dim must be positive");
    if (heads <= 0 || dim % heads) throw ConfigError("sa.heads must divide sa.dim");
    if (spectral_spec.domain != RedactionDomain::spectral) throw ConfigError("sa.redaction must be spectral");
    spectral_spec.validate();
  }
  void validate_for(int h, int w) const {
    validate();
    if (h % patch || w % patch)
      throw ConfigError("image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by sa.patch " +
                        std::to_string(patch));
  }
  friend bool operator==(const SaConfig&, const SaConfig&) = default;
};

// Patch embedding: patchify then a linear projection to the model dim.
template <typename T>
struct PatchEmbed {
  nn::Linear<T> proj;
  int patch = 1;

  PatchEmbed() = default;
  PatchEmbed(int channels, int patch_, int dim, SeededRng& rng) : proj(channels * patch_ * patch_, dim, rng), patch(patch_) {}
  Var<T> operator()(const Var<T>& x) const { return proj(ag::patchify(x, patch)); }
  void collect(nn::ParamSet<T>& ps, const std::string& prefix) const { proj.collect(ps, prefix); }
};

// Multi-head attention block with input and output projections.
template <typename T>
struct SharedMha {
  nn::Linear<T> wq, wk, wv, wo;
  int heads = 1;

  SharedMha() = default;
  SharedMha(int dim, int heads_, SeededRng& rng)
      : wq(dim, dim, rng), wk(dim, dim, rng), wv(dim, dim, rng), wo(dim, dim, rng), heads(heads_) {}
  Var<T> operator()(const Var<T>& q, const Var<T>& k, const Var<T>& v, Tensor<T>* attn_out = nullptr) const {
    return wo(ag::multi_head_attention_core(wq(q), wk(k), wv(v), heads, attn_out));
  }
  void collect(nn::ParamSet<T>& ps, const std::string& prefix) const {
    wq.collect(ps, prefix + ".wq");
    wk.collect(ps, prefix + ".wk");
    wv.collect(ps, prefix + ".wv");
    wo.collect(ps, prefix + ".wo");
  }
};

// Transposed-conv decoder from the token grid back to full resolution.
template <typename T>
struct TokenDecoder {
  nn::ConvTranspose2d<T> up;
  nn::Conv2d<T> out;

  TokenDecoder() = default;
  TokenDecoder(int dim, int hidden, int patch, int channels, SeededRng& rng)
      : up(dim, hidden, patch, patch, 0, rng), out(hidden, channels, 1, 1, 0, rng) {}
  Var<T> operator()(const Var<T>& grid) const { return out(ag::relu(up(grid))); }
  void collect(nn::ParamSet<T>& ps, const std::string& prefix) const {
    up.collect(ps, prefix + ".up");
    out.collect(ps, prefix + ".out");
  }
};

template <typename T>
struct SaParams {
  // Enhancement pass: queries from predictions, keys/values from the image.
  PatchEmbed<T> q, k, v;
  // Regeneration pass: queries from the redacted image, keys/values from predictions.
  PatchEmbed<T> q_r, k_r, v_r;
  SharedMha<T> mha;
  TokenDecoder<T> regen_decoder;
  TokenDecoder<T> enhance_decoder;

  SaParams() = default;
  SaParams(const SaConfig& cfg, int cond_channels, SeededRng& rng) {
    cfg.validate();
    const int p = cfg.patch, d = cfg.dim;
    q = PatchEmbed<T>(cond_channels, p, d, rng);
    k = PatchEmbed<T>(3, p, d, rng);
    v = PatchEmbed<T>(3, p, d, rng);
    q_r = PatchEmbed<T>(3, p, d, rng);
    k_r = PatchEmbed<T>(cond_channels, p, d, rng);
    v_r = PatchEmbed<T>(cond_channels, p, d, rng);
    mha = SharedMha<T>(d, cfg.heads, rng);
    regen_decoder = TokenDecoder<T>(d, cfg.decoder_hidden(), p, 3, rng);
    enhance_decoder = TokenDecoder<T>(d, cfg.decoder_hidden(), p, cond_channels, rng);
  }

  nn::ParamSet<T> parameters() const {
    nn::ParamSet<T> ps;
    q.collect(ps, "sa.q");
    k.collect(ps, "sa.k");
    v.collect(ps, "sa.v");
    q_r.collect(ps, "sa.q_r");
    k_r.collect(ps, "sa.k_r");
    v_r.collect(ps, "sa.v_r");
    mha.collect(ps, "sa.mha");
    regen_decoder.collect(ps, "sa.regen_decoder");
    enhance_decoder.collect(ps, "sa.enhance_decoder");
    return ps;
  }
};

// Training-only pass: spectrally redacted image queries attend to the
// predictions; decodes a regenerated 3 x H x W image.
template <typename T>
Var<T> sa_regeneration_pass(const Var<T>& img, const Var<T>& cond, const SaParams<T>& params, const SaConfig& cfg,
                            Tensor<T>* attn_out = nullptr) {
  const int H = img.dim(2), W = img.dim(3);
  cfg.validate_for(H, W);
  SeededRng unused(0);
  Var<T> img_r = ag::constant(redact_batch(img.value(), cfg.spectral_spec, unused));
  Var<T> tokens = params.mha(params.q_r(img_r), params.k_r(cond), params.v_r(cond), attn_out);
  return params.regen_decoder(ag::tokens_to_grid(tokens, H / cfg.patch, W / cfg.patch));
}

// Prediction queries attend to the image; decodes enhanced predictions with
// the per-task output activations applied.
template <typename T>
Var<T> sa_enhancement_pass(const Var<T>& img, const Var<T>& cond, const SaParams<T>& params, const SaConfig& cfg,
                           const tasks::ConditionLayout& layout, Tensor<T>* attn_out = nullptr) {
  const int H = img.dim(2), W = img.dim(3);
  cfg.validate_for(H, W);
  if (cond.dim(1) != layout.channels()) throw ConfigError("sa: condition channels do not match layout");
  Var<T> tokens = params.mha(params.q(cond), params.k(img), params.v(img), attn_out);
  Var<T> raw = params.enhance_decoder(ag::tokens_to_grid(tokens, H / cfg.patch, W / cfg.patch));
  return tasks::activate_layout(raw, layout);
}

// Multiply-accumulate count of one inference-time (enhancement) pass for a
// single H x W image with `cond_channels` prediction channels.
inline std::uint64_t sa_inference_macs(const SaConfig& cfg, int H, int W, int cond_channels) {
  const std::uint64_t p = cfg.patch, d = cfg.dim, L = (H / p) * (W / p), hid = cfg.decoder_hidden();
  const std::uint64_t embed = L * (cond_channels * p * p) * d + 2 * L * (3 * p * p) * d;
  const std::uint64_t projections = 4 * L * d * d;
  const std::uint64_t attention = 2 * L * L * d;
  const std::uint64_t decoder = L * d * hid * p * p + static_cast<std::uint64_t>(H) * W * hid * cond_channels;
  return embed + projections + attention + decoder;
}

}  // namespace dejavu::sa
